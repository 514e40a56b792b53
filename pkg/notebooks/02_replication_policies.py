# %% [markdown]
# # Cache replication policies
#
# `p2p` fills a cache with a set chosen with probability proportional to the
# product of its popularities, `unif` ignores popularity, and `greedy` runs
# the greedy matcher on the whole fleet.

# %%
from collections import Counter

import numpy as np

from cdncache.alloc import allocate, greedy_theta, subset_probabilities
from cdncache.model import Catalog, ServerClass, SystemSpec, build_spec

# %%
n = 50_000
spec = SystemSpec(n, (ServerClass(1, 2, count=n),), Catalog(np.array([0.5, 0.3, 0.2])))
law = subset_probabilities(spec.catalog.normalized, 2)
for policy in ("p2p", "unif"):
    counts = Counter(tuple(sorted(k)) for k in allocate(policy, spec, seed=1).stored)
    print(policy, {k: round(counts[k] / n, 4) for k in law})
print("p2p law", {k: round(v, 4) for k, v in law.items()})

# %% [markdown]
# With a Zipf catalog, p2p still puts most of the cache space on the head of
# the catalog, while greedy gives each server a single popular content.

# %%
spec = build_spec({"n": 400, "classes": [{"bandwidth": 1, "cache_size": 2, "fraction": 1}],
                   "catalog": {"generator": {"m": 500, "eta": 2, "rho": 0.8}}})
for policy in ("greedy", "p2p", "unif"):
    alloc = allocate(policy, spec, seed=3)
    copies = np.bincount([c for k in alloc.stored for c in k], minlength=spec.m + 1)[1:]
    print(f"{policy:6s} copies of top-5: {copies[:5].tolist()}  distinct contents cached: {(copies > 0).sum()}")

# %% [markdown]
# Limiting capacity per content under greedy. Below load 1 every content
# gets its own rate. Above it, only the head of the catalog is served, and
# each served content is short by the same amount.

# %%
lam = np.array([0.5, 0.3, 0.2])
for rho in (0.8, 1.25, 2.0, 9.0):
    th = greedy_theta(lam, rho)
    print(f"rho={rho:<5} theta={np.round(th.theta, 4).tolist()}  c*={th.cstar}  shortfall={np.round(lam - th.theta, 4).tolist()}")
