# %% [markdown]
# # Fluid limit
#
# As the fleet grows, the fraction of busy slots follows a deterministic
# path. With unit caches under greedy placement each content evolves on its
# own: it grows like `rate * (1 - exp(-t))` until it hits its capacity.

# %%
import numpy as np

from cdncache.alloc import allocate
from cdncache.experiment import make_spec
from cdncache.fluid import FluidModel, per_content_y, stationary
from cdncache.sim import simulate

# %%
params = dict(n=1000, m=500, rho=1.2, eta=2.0, d=1, u=1)
spec = make_spec(params)
st = stationary(spec, "greedy")
print(f"limit y = {st.y_inf:.4f}, best blocking = {st.blocking_floor:.4f}")

t = np.arange(0, 10.001, 0.01)
closed = sum(per_content_y(lam, cap, 0.0, t) for lam, cap in zip(spec.per_server_rates, st.per_content))

# %% [markdown]
# The projected Euler integrator on the full configuration model agrees
# with the closed form.

# %%
model = FluidModel.from_spec(spec, "greedy")
traj = model.integrate(model.empty_state(), 10.0, 1e-3)
print("DI vs closed form, sup gap:", np.max(np.abs(traj.y[::10] - closed)))

# %% [markdown]
# Simulated paths scatter around it; their average tracks it closely.

# %%
alloc = allocate("greedy", spec)
paths = np.array([
    simulate(spec, alloc, num_arrivals=12_600, seed=s, sample_interval=0.01).trajectory_y[: t.size]
    for s in range(8)
])
print("single-path sup gaps:", np.round(np.max(np.abs(paths - closed), axis=1), 3).tolist())
print("mean-path sup gap:   ", round(float(np.max(np.abs(paths.mean(axis=0) - closed))), 4))
for k in (0, 100, 300, 1000):
    print(f"t={t[k]:5.1f}  fluid {closed[k]:.4f}  sim mean {paths[:, k].mean():.4f}")
