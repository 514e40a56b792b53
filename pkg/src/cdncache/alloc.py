"""Cache replication policies and their limiting configuration fractions.

Random policies fill each server independently: ``p2p`` draws a ``d``-subset
with probability proportional to the product of its normalized popularities,
``unif`` draws a uniform ``d``-subset. The ``greedy`` policy runs the greedy
JAM algorithm on the explicit fleet.

For the fluid model, :func:`config_fractions` gives the share ``q`` of each
server class holding each content set, and :func:`theta_greedy` gives the
limiting per-content capacity of the greedy policy.
"""

from __future__ import annotations

import enum
import itertools
import math
from typing import NamedTuple

import numpy as np

from .errors import CacheTooLarge, TiedPopularities
from .jam import Allocation, greedy_solve, JamInstance
from .model import SystemSpec

__all__ = [
    "PolicyKind",
    "ThetaVector",
    "allocate",
    "sample_p2p",
    "sample_unif",
    "greedy_caches",
    "subset_probabilities",
    "elementary_symmetric",
    "greedy_theta",
    "theta_greedy",
    "config_fractions",
    "MAX_CONFIGS",
]

TIE_TOL = 1e-12
MAX_CONFIGS = 200_000


class PolicyKind(str, enum.Enum):
    GREEDY = "greedy"
    P2P = "p2p"
    UNIF = "unif"


class ThetaVector(NamedTuple):
    theta: np.ndarray
    cstar: int


def _check_cache_sizes(cache_sizes, m):
    too_big = np.asarray(cache_sizes) > m
    if np.any(too_big):
        raise CacheTooLarge(f"cache size {int(np.max(cache_sizes))} exceeds catalog size m={m}")


def elementary_symmetric(p, d: int) -> np.ndarray:
    """Suffix table ``E[c, k] = e_k(p[c:])`` for ``k <= d``.

    Row ``len(p)`` is the empty suffix (``e_0 = 1``).
    """
    p = np.asarray(p, dtype=float)
    m = p.size
    E = np.zeros((m + 1, d + 1))
    E[m, 0] = 1.0
    for c in range(m - 1, -1, -1):
        E[c] = E[c + 1]
        E[c, 1:] += p[c] * E[c + 1, :-1]
    return E


def _sample_product_subsets(weights, cache_sizes, rng) -> list[frozenset[int]]:
    """Draw, per server, a subset of size ``d_s`` with probability proportional
    to the product of its weights.

    Contents are visited in order; a server still needing ``k`` items takes
    content ``c`` with probability ``w_c e_{k-1}(w[c+1:]) / e_k(w[c:])``.
    """
    w = np.asarray(weights, dtype=float)
    m = w.size
    w = w * (m / w.sum())  # rescaling leaves the law unchanged and avoids underflow
    cache_sizes = np.asarray(cache_sizes, dtype=int)
    dmax = int(cache_sizes.max(initial=0))
    E = elementary_symmetric(w, dmax)
    need = cache_sizes.copy()
    chosen = np.zeros((cache_sizes.size, m), dtype=bool)
    for c in range(m):
        active = need > 0
        if not active.any():
            break
        k = need[active]
        prob = w[c] * E[c + 1, k - 1] / E[c, k]
        take = rng.random(k.size) < prob
        idx = np.nonzero(active)[0][take]
        chosen[idx, c] = True
        need[idx] -= 1
    return [frozenset((np.nonzero(row)[0] + 1).tolist()) for row in chosen]


def sample_p2p(spec: SystemSpec, seed: int) -> Allocation:
    """Proportional-to-product fill of every server in the (explicit) fleet."""
    fleet = spec.fleet()
    _check_cache_sizes(fleet.cache_sizes, spec.m)
    rng = np.random.default_rng(seed)
    return Allocation(tuple(_sample_product_subsets(spec.catalog.normalized, fleet.cache_sizes, rng)))


def sample_unif(spec: SystemSpec, seed: int) -> Allocation:
    """Uniform ``d_s``-subset for every server, independently."""
    fleet = spec.fleet()
    _check_cache_sizes(fleet.cache_sizes, spec.m)
    rng = np.random.default_rng(seed)
    keys = rng.random((fleet.n, spec.m))
    order = np.argsort(keys, axis=1)
    return Allocation(
        tuple(frozenset((order[s, :d] + 1).tolist()) for s, d in enumerate(fleet.cache_sizes))
    )


def greedy_caches(spec: SystemSpec) -> Allocation:
    """Allocation produced by the greedy JAM algorithm on the full-rate instance."""
    return greedy_solve(JamInstance.from_spec(spec.to_explicit())).alloc


def allocate(policy: PolicyKind | str, spec: SystemSpec, seed: int = 0) -> Allocation:
    policy = PolicyKind(policy)
    if policy is PolicyKind.GREEDY:
        return greedy_caches(spec)
    if policy is PolicyKind.P2P:
        return sample_p2p(spec, seed)
    return sample_unif(spec, seed)


def subset_probabilities(popularity, d: int) -> dict[tuple[int, ...], float]:
    """``p_K = prod_{c in K} w_c / Z`` over all ``d``-subsets (1-based tuples)."""
    w = np.asarray(popularity, dtype=float)
    m = w.size
    if d > m:
        raise CacheTooLarge(f"cache size {d} exceeds catalog size m={m}")
    w = w / w.sum()
    probs = {}
    for combo in itertools.combinations(range(m), d):
        probs[tuple(c + 1 for c in combo)] = float(np.prod(w[list(combo)]))
    z = math.fsum(probs.values())
    return {k: v / z for k, v in probs.items()}


def greedy_theta(per_server_rates, rho: float) -> ThetaVector:
    """Limiting normalized capacity per content under greedy placement.

    For ``rho <= 1`` every content gets its own rate. For ``rho > 1`` only
    the ``c*`` most popular contents get capacity, and they share the
    total capacity ``lambda_bar / rho`` so that their unmatched remainders
    are equal. ``c*`` is the unique index with
    ``lambda_bar/rho`` in ``(S_{c*-1} - (c*-1) r_{c*}, S_{c*} - c* r_{c*+1}]``
    where ``S`` are prefix sums of the sorted rates ``r`` and ``r_{m+1} = 0``.

    Parameters
    ----------
    per_server_rates : array_like
        ``lambda_bar_c``; must be pairwise distinct when ``rho > 1``. Need not
        be sorted; ``cstar`` counts the contents receiving capacity.
    rho : float
        System load.
    """
    lam = np.asarray(per_server_rates, dtype=float)
    if rho <= 1:
        return ThetaVector(lam.copy(), lam.size)
    order = np.argsort(-lam, kind="stable")
    r = lam[order]
    gaps = r[:-1] - r[1:]
    if np.any(gaps <= TIE_TOL * np.maximum(r[:-1], 1e-300)):
        raise TiedPopularities("greedy capacity split needs strictly ordered popularities")
    if r[-1] <= 0:
        raise TiedPopularities("popularities must be positive")
    m = r.size
    target = r.sum() / rho
    prefix = np.cumsum(r)
    ks = np.arange(1, m + 1)
    nxt = np.append(r[1:], 0.0)
    hi = prefix - ks * nxt
    lo = np.append(0.0, hi[:-1])
    inside = np.nonzero((lo < target) & (target <= hi))[0]
    if inside.size == 0:
        # only reachable through rounding at an interval endpoint
        inside = np.array([int(np.searchsorted(hi, target))])
    cstar = int(inside[0]) + 1
    theta_sorted = np.zeros(m)
    theta_sorted[:cstar] = r[:cstar] - (prefix[cstar - 1] - target) / cstar
    theta = np.empty(m)
    theta[order] = theta_sorted
    return ThetaVector(theta, cstar)


def theta_greedy(spec: SystemSpec) -> ThetaVector:
    return greedy_theta(spec.per_server_rates, spec.load)


def config_fractions(
    policy: PolicyKind | str, spec: SystemSpec, max_configs: int = MAX_CONFIGS
) -> dict[tuple[int, int, tuple[int, ...]], float]:
    """Limiting fraction ``q`` of class-``(U, d)`` servers holding each content set.

    Keys are ``(bandwidth, cache_size, K)`` with ``K`` a sorted tuple of
    1-based content ids. Random policies give ``q = p_{dK}`` for every class.
    Greedy gives singletons only, with each content's capacity split across
    classes in proportion to ``alpha * U``, so ``q_c = theta_c / sum(alpha U)``
    in every class; when ``rho < 1`` the leftover servers hold nothing and
    appear under ``K = ()``.
    """
    policy = PolicyKind(policy)
    classes = spec.class_fractions
    out: dict[tuple[int, int, tuple[int, ...]], float] = {}
    if policy is PolicyKind.GREEDY:
        theta = theta_greedy(spec).theta
        q = theta / (spec.total_rate / spec.load)
        empty = max(0.0, 1.0 - float(q.sum()))
        for (u, d) in classes:
            for c in np.nonzero(q > 0)[0]:
                out[(u, d, (int(c) + 1,))] = float(q[c])
            if empty > 1e-15:
                out[(u, d, ())] = empty
        return out

    total = sum(math.comb(spec.m, d) for (_, d) in classes)
    if total > max_configs:
        raise MemoryError(
            f"{total} configurations exceed max_configs={max_configs}; raise the limit explicitly"
        )
    popularity = spec.catalog.normalized if policy is PolicyKind.P2P else np.ones(spec.m)
    by_size: dict[int, dict[tuple[int, ...], float]] = {}
    for (u, d) in classes:
        if d not in by_size:
            by_size[d] = subset_probabilities(popularity, d)
        for K, p in by_size[d].items():
            out[(u, d, K)] = p
    return out
