# %% [markdown]
# # Joint allocation and matching on small fleets
#
# Each server has a bandwidth (simultaneous requests) and a cache size.
# We pick what each cache stores and how much request rate flows to each
# (server, content) pair. `greedy_solve` is the fast heuristic,
# `exact_solve` enumerates supports on tiny instances.

# %%
import numpy as np

from cdncache.jam import JamInstance, exact_solve, greedy_solve, three_partition_instance

# %% [markdown]
# Two servers: one with bandwidth 10 and a single cache slot, one with
# bandwidth 5 and two slots. Three contents with rates 8, 4 and 3.

# %%
inst = JamInstance(bandwidths=[10, 5], cache_sizes=[1, 2], rates=[8, 4, 3])
g = greedy_solve(inst)
for s, c, f in g.trace:
    print(f"server {s} <- content {c}: {f:g}")
print("greedy value", g.value, "allocation", g.alloc.to_json())
print("optimum     ", exact_solve(inst).value)

# %% [markdown]
# Greedy is guaranteed at least half the optimum. On random small
# instances it is usually much closer.

# %%
rng = np.random.default_rng(0)
ratios = []
for _ in range(300):
    n, m = rng.integers(1, 5, size=2)
    x = JamInstance(rng.integers(1, 11, n), rng.integers(1, m + 1, n), rng.uniform(1, 10, m))
    ratios.append(greedy_solve(x).value / exact_solve(x).value)
ratios = np.array(ratios)
print(f"worst {ratios.min():.3f}  mean {ratios.mean():.4f}  optimal in {np.mean(ratios > 1 - 1e-9):.0%} of cases")

# %% [markdown]
# Hardness: a 3-partition question maps to a fleet of bandwidth-L servers
# holding 3 contents each. The optimum reaches n*L only if the sizes split
# into triples of sum L.

# %%
for sizes in ([1, 2, 3, 1, 2, 3], [1, 1, 4, 1, 2, 3], [1, 1, 1, 3, 3, 3]):
    v = exact_solve(three_partition_instance(sizes, 6), limit_m=6).value
    print(sizes, "->", v, "(partition)" if v == 12 else "(no partition)")
