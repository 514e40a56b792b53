# %% [markdown]
# # Blocking in the finite system
#
# Requests arrive as Poisson streams, go to a random available server that
# stores the content, and are blocked when there is none. These runs use
# fewer arrivals than the full sweeps to stay quick; the `experiment`
# command reproduces the full grids.

# %%
from pathlib import Path

import numpy as np

from cdncache.alloc import allocate
from cdncache.experiment import default_plan, make_spec, run_experiment
from cdncache.sim import erlang_b, simulate
from cdncache.jam import Allocation
from cdncache.model import Catalog, ServerClass, SystemSpec

OUT = Path(__file__).resolve().parent / "out"

# %% [markdown]
# Sanity check against Erlang-B: one server with U slots and one content.

# %%
for u in (1, 2, 4):
    spec = SystemSpec(1, (ServerClass(u, 1, count=1),), Catalog(np.array([1.0])))
    p = simulate(spec, Allocation((frozenset({1}),)), num_arrivals=80_000, seed=u).blocking_probability
    print(f"U={u}: simulated {p:.4f}  Erlang-B {erlang_b(u, 1.0):.4f}")

# %% [markdown]
# Blocking shrinks with the fleet size at load 0.8 (where the best possible
# limit is zero) roughly like n^(-1/2).

# %%
ns = [10, 50, 200, 1000]
blocking = []
for n in ns:
    params = dict(policy="p2p", n=n, m=500, rho=0.8, eta=2.0, d=2, u=1)
    spec = make_spec(params)
    blocking.append(np.mean([
        simulate(spec, allocate("p2p", spec, s), num_arrivals=60_000, seed=s).blocking_probability
        for s in range(3)
    ]))
slope = np.polyfit(np.log(ns), np.log(blocking), 1)[0]
print(dict(zip(ns, np.round(blocking, 4))), f"log-log slope {slope:.2f}")

# %% [markdown]
# Service-time insensitivity: the blocking probability barely depends on
# the service law as long as the mean is 1.

# %%
spec = make_spec(dict(n=400, m=500, rho=0.8, eta=2.0, d=2, u=1))
alloc = allocate("greedy", spec)
for dist in ("exp", "const", "lognorm", "pareto"):
    p = simulate(spec, alloc, dist=dist, num_arrivals=80_000, seed=5).blocking_probability
    print(f"{dist:8s} {p:.4f}")

# %% [markdown]
# A small sweep through the experiment harness writes a CSV, a manifest
# and an SVG plot.

# %%
plan = default_plan("rho-sweep", replications=1, output_dir=str(OUT), fixed={"n": 100, "arrivals": 20_000},
                    grid={"policy": ["greedy", "p2p", "unif"], "rho": [0.4, 0.8, 1.2, 1.6]})
res = run_experiment(plan)
print(res.csv_path, res.manifest_path, [str(f) for f in res.figures])
