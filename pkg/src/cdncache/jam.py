"""Static joint allocation-matching (JAM) layer.

Given server bandwidths ``U_s``, cache sizes ``d_s`` and content rates
``lambda_c``, the JAM problem chooses which contents each server stores so the
maximum matchable request flow is as large as possible. This module holds

* :func:`max_matching_value` -- the best flow for a *fixed* allocation, as an
  integer max-flow on source -> servers -> contents -> sink;
* :func:`greedy_solve` -- the greedy placement (pair the server with the most
  spare bandwidth with the content with the most unmatched demand);
* :func:`exact_solve` -- a brute-force optimum over all support patterns, used
  as a test oracle on tiny instances;
* :func:`allocation_from_flow` and :func:`three_partition_instance`.

Server and content ids in allocations, flows and traces are 1-based.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_flow

from .errors import BadSizes, InstanceTooLarge, NonIntegralRates, SupportTooLarge
from .model import SystemSpec

__all__ = [
    "JamInstance",
    "Allocation",
    "FlowAssignment",
    "GreedyResult",
    "ExactResult",
    "as_instance",
    "max_matching_value",
    "greedy_solve",
    "exact_solve",
    "allocation_from_flow",
    "three_partition_instance",
]

DEFAULT_SCALE = 10**6
_INT32_MAX = 2**31 - 1


@dataclass(frozen=True)
class JamInstance:
    """Bare per-server arrays of a JAM problem.

    Unlike :class:`~cdncache.model.SystemSpec` this allows real bandwidths and
    zero rates, which the reduction and some degenerate cases need.
    """

    bandwidths: np.ndarray
    cache_sizes: np.ndarray
    rates: np.ndarray

    def __post_init__(self):
        bw = np.asarray(self.bandwidths, dtype=float)
        cs = np.asarray(self.cache_sizes, dtype=int)
        rates = np.asarray(self.rates, dtype=float)
        if bw.shape != cs.shape or bw.ndim != 1:
            raise ValueError("bandwidths and cache_sizes must be 1-d and equal length")
        if np.any(bw < 0) or np.any(cs < 0) or np.any(rates < 0):
            raise ValueError("bandwidths, cache sizes and rates must be nonnegative")
        for name, arr in (("bandwidths", bw), ("cache_sizes", cs), ("rates", rates)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return int(self.bandwidths.size)

    @property
    def m(self) -> int:
        return int(self.rates.size)

    @classmethod
    def from_spec(cls, spec: SystemSpec) -> "JamInstance":
        fleet = spec.fleet()
        return cls(fleet.bandwidths, fleet.cache_sizes, spec.rates)


def as_instance(instance) -> JamInstance:
    if isinstance(instance, JamInstance):
        return instance
    if isinstance(instance, SystemSpec):
        return JamInstance.from_spec(instance)
    raise TypeError(f"expected JamInstance or SystemSpec, got {type(instance).__name__}")


@dataclass(frozen=True)
class Allocation:
    """Per-server stored content sets; ``stored[s - 1]`` is the cache of server ``s``."""

    stored: tuple[frozenset[int], ...]

    def __post_init__(self):
        object.__setattr__(self, "stored", tuple(frozenset(int(c) for c in k) for k in self.stored))

    @property
    def n(self) -> int:
        return len(self.stored)

    @classmethod
    def empty(cls, n: int) -> "Allocation":
        return cls(tuple(frozenset() for _ in range(n)))

    def matrix(self, m: int) -> np.ndarray:
        """Binary ``n x m`` matrix ``a_sc``."""
        a = np.zeros((self.n, m), dtype=np.int8)
        for s, k in enumerate(self.stored):
            for c in k:
                a[s, c - 1] = 1
        return a

    def is_feasible(self, cache_sizes: Sequence[int], m: int | None = None) -> bool:
        if len(cache_sizes) != self.n:
            return False
        for k, d in zip(self.stored, cache_sizes):
            if len(k) > d:
                return False
            if m is not None and any(not 1 <= c <= m for c in k):
                return False
        return True

    def key(self) -> tuple[tuple[int, ...], ...]:
        """Sortable form used for deterministic tie-breaking."""
        return tuple(tuple(sorted(k)) for k in self.stored)

    def to_json(self) -> dict[str, list[int]]:
        return {str(s + 1): sorted(k) for s, k in enumerate(self.stored)}

    @classmethod
    def from_json(cls, data: Mapping[str, Iterable[int]], n: int | None = None) -> "Allocation":
        ids = sorted(int(s) for s in data)
        n = n if n is not None else (ids[-1] if ids else 0)
        stored = [frozenset()] * n
        for s, contents in data.items():
            stored[int(s) - 1] = frozenset(int(c) for c in contents)
        return cls(tuple(stored))


@dataclass(frozen=True)
class FlowAssignment:
    """Matched flow ``z_sc`` keyed by 1-based ``(server, content)``."""

    flows: Mapping[tuple[int, int], float]
    n: int

    @property
    def value(self) -> float:
        return float(sum(self.flows.values()))

    def matrix(self, m: int) -> np.ndarray:
        z = np.zeros((self.n, m))
        for (s, c), f in self.flows.items():
            z[s - 1, c - 1] = f
        return z

    def violations(self, bandwidths, rates, cache_sizes=None, tol: float = 1e-9) -> list[str]:
        """Describe every broken feasibility constraint (empty list if feasible)."""
        z = self.matrix(len(rates))
        out = []
        if np.any(z < 0):
            out.append("negative flow")
        over_s = np.nonzero(z.sum(axis=1) > np.asarray(bandwidths) + tol)[0]
        out += [f"server {s + 1} exceeds bandwidth" for s in over_s]
        over_c = np.nonzero(z.sum(axis=0) > np.asarray(rates) + tol)[0]
        out += [f"content {c + 1} exceeds demand" for c in over_c]
        if cache_sizes is not None:
            support = (z > 0).sum(axis=1)
            out += [f"server {s + 1} support exceeds cache" for s in np.nonzero(support > np.asarray(cache_sizes))[0]]
        return out


class GreedyResult(NamedTuple):
    alloc: Allocation
    flow: FlowAssignment
    trace: list[tuple[int, int, float]]

    @property
    def value(self) -> float:
        return float(sum(f for _, _, f in self.trace))


class ExactResult(NamedTuple):
    value: float
    alloc: Allocation
    flow: FlowAssignment


def _to_int(values, scale, what) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if scale is None:
        if not np.all(arr == np.round(arr)):
            raise NonIntegralRates(f"exact mode needs integral {what}")
        return np.round(arr).astype(np.int64)
    # round down (with slack for representation error) so scaled flows never exceed the inputs
    return np.floor(arr * scale + 1e-6).astype(np.int64)


def max_matching_value(
    alloc: Allocation,
    rates: Sequence[float],
    caps: Sequence[float],
    scale: float | None = DEFAULT_SCALE,
) -> tuple[float, FlowAssignment]:
    """Maximum matchable flow under a fixed allocation.

    Solved as an integer max-flow on source -> server ``s`` (capacity ``U_s``)
    -> content ``c`` (only if ``c`` is stored at ``s``) -> sink (capacity
    ``lambda_c``). Real inputs are multiplied by ``scale`` and rounded down,
    so the returned flow is always feasible and its value is at most
    ``(n + m) / scale`` below the optimum; the scale is lowered automatically when the totals would not fit the int32
    capacities of the solver. ``scale=None`` requests exact mode, where the
    inputs must already be integers.

    Returns
    -------
    value : float
    flow : FlowAssignment
    """
    rates = np.asarray(rates, dtype=float)
    caps = np.asarray(caps, dtype=float)
    n, m = len(caps), len(rates)
    if alloc.n != n:
        raise ValueError(f"allocation has {alloc.n} servers, caps has {n}")
    if scale is not None:
        total = max(float(caps.sum()), float(rates.sum()), 1.0)
        scale = min(float(scale), np.floor(_INT32_MAX / total))
    u_int = _to_int(caps, scale, "bandwidths")
    l_int = _to_int(rates, scale, "rates")
    if max(u_int.sum(), l_int.sum()) > _INT32_MAX:
        raise OverflowError("instance too large for int32 max-flow")
    unit = 1.0 if scale is None else float(scale)

    rows, cols, data = [], [], []
    src, sink = 0, n + m + 1
    for s in range(n):
        if u_int[s] > 0:
            rows.append(src), cols.append(1 + s), data.append(u_int[s])
        for c in alloc.stored[s]:
            if not 1 <= c <= m:
                raise ValueError(f"server {s + 1} stores unknown content {c}")
            cap = min(u_int[s], l_int[c - 1])
            if cap > 0:
                rows.append(1 + s), cols.append(n + c), data.append(cap)
    for c in range(m):
        if l_int[c] > 0:
            rows.append(n + 1 + c), cols.append(sink), data.append(l_int[c])
    if not data:
        return 0.0, FlowAssignment({}, n)
    graph = csr_matrix(
        (np.array(data, dtype=np.int32), (rows, cols)), shape=(n + m + 2, n + m + 2)
    )
    res = maximum_flow(graph, src, sink)
    flow_mat = res.flow.tocoo()
    flows = {}
    for i, j, f in zip(flow_mat.row, flow_mat.col, flow_mat.data):
        if 1 <= i <= n and n + 1 <= j <= n + m and f > 0:
            flows[(int(i), int(j - n))] = float(f / unit)
    return float(res.flow_value / unit), FlowAssignment(flows, n)


def greedy_solve(instance) -> GreedyResult:
    """Greedy allocation and matching.

    While some server with free degree and spare bandwidth and some content
    with unmatched demand remain, match the server with the most spare
    bandwidth (among servers with free cache slots) to the content with the
    most unmatched demand, by the smaller of the two amounts. Ties go to the
    lowest server index, then the lowest content index. Terminates within
    ``m + n`` steps because every step zeroes a server or a content.
    """
    inst = as_instance(instance)
    flow_s = inst.bandwidths.astype(float).copy()
    deg = inst.cache_sizes.astype(int).copy()
    flow_c = inst.rates.astype(float).copy()
    trace: list[tuple[int, int, float]] = []
    stored: list[set[int]] = [set() for _ in range(inst.n)]
    flows: dict[tuple[int, int], float] = {}
    if inst.m == 0:
        return GreedyResult(Allocation.empty(inst.n), FlowAssignment({}, inst.n), trace)

    masked = np.empty_like(flow_s)
    while np.any(flow_s * deg > 0) and np.any(flow_c > 0):
        np.copyto(masked, flow_s)
        masked[deg <= 0] = -np.inf
        s = int(np.argmax(masked))
        c = int(np.argmax(flow_c))
        f = min(flow_s[s], flow_c[c])
        flow_s[s] -= f
        flow_c[c] -= f
        deg[s] -= 1
        stored[s].add(c + 1)
        flows[(s + 1, c + 1)] = float(f)
        trace.append((s + 1, c + 1, float(f)))
    alloc = Allocation(tuple(frozenset(k) for k in stored))
    return GreedyResult(alloc, FlowAssignment(flows, inst.n), trace)


def _subset_masks(m: int, d: int) -> list[int]:
    return [sum(1 << c for c in combo) for combo in itertools.combinations(range(m), min(d, m))]


def _mask_members(mask: int, ids: Sequence[int]) -> frozenset[int]:
    return frozenset(ids[i] for i in range(len(ids)) if mask >> i & 1)


def exact_solve(instance, limit_n: int = 4, limit_m: int = 4) -> ExactResult:
    """Optimal JAM value by enumerating every feasible support pattern.

    Each server independently picks a content subset of size ``min(d_s, m)``;
    smaller subsets are skipped because the matchable flow never decreases
    when a server stores more. For a fixed pattern the best flow is a
    max-flow, whose value is evaluated
    here through the max-flow/min-cut identity

        value = min over content sets T of
                sum_{c in T} lambda_c + sum_{s : stored(s) not within T} U_s,

    vectorized over all patterns at once. The winning pattern (ties go to the
    lexicographically smallest one) is re-solved with
    :func:`max_matching_value`, and the returned allocation is the support of
    that optimal flow. Zero-rate contents are dropped first since they cannot
    carry flow.
    """
    inst = as_instance(instance)
    if inst.n > limit_n or inst.m > limit_m:
        raise InstanceTooLarge(
            f"exact_solve limited to n<={limit_n}, m<={limit_m}; got n={inst.n}, m={inst.m}"
        )
    live = [c for c in range(inst.m) if inst.rates[c] > 0]
    ids = [c + 1 for c in live]
    k = len(live)
    if k == 0 or inst.n == 0:
        alloc = Allocation.empty(inst.n)
        return ExactResult(0.0, alloc, FlowAssignment({}, inst.n))
    lam = inst.rates[live]
    caps = inst.bandwidths

    per_server = [_subset_masks(k, int(d)) for d in inst.cache_sizes]
    patterns = np.array(list(itertools.product(*per_server)), dtype=np.int64)  # (P, n)
    cuts = np.arange(1 << k, dtype=np.int64)  # content sets T as bitmasks
    members = (cuts[:, None] >> np.arange(k)) & 1  # (T, k)
    demand_side = members @ lam  # sum_{c in T} lambda_c
    outside = patterns[:, None, :] & ~cuts[None, :, None]  # (P, T, n)
    cost = demand_side[None, :] + (outside != 0).astype(float) @ caps
    values = cost.min(axis=1)

    best = values.max()
    tol = 1e-9 * max(1.0, best)
    winners = np.nonzero(values >= best - tol)[0]
    allocs = [
        Allocation(tuple(_mask_members(int(mask), ids) for mask in patterns[p])) for p in winners
    ]
    pattern = min(allocs, key=Allocation.key)
    _, flow = max_matching_value(pattern, inst.rates, caps)
    return ExactResult(float(best), allocation_from_flow(flow), flow)


def allocation_from_flow(
    flow: FlowAssignment, cache_sizes: Sequence[int] | None = None
) -> Allocation:
    """Indicator allocation ``a_sc = 1[z_sc > 0]`` of a flow."""
    stored: list[set[int]] = [set() for _ in range(flow.n)]
    for (s, c), z in flow.flows.items():
        if z > 0:
            stored[s - 1].add(c)
    if cache_sizes is not None:
        for s, (k, d) in enumerate(zip(stored, cache_sizes)):
            if len(k) > d:
                raise SupportTooLarge(f"server {s + 1} carries {len(k)} contents, cache holds {d}")
    return Allocation(tuple(frozenset(k) for k in stored))


def three_partition_instance(sizes: Sequence[float], L: float) -> JamInstance:
    """JAM instance encoding a 3-partition question.

    Each of the ``3n`` elements becomes a content with rate equal to its size;
    there are ``n`` servers, each with bandwidth ``L`` and room for 3
    contents. The optimum equals ``n * L`` exactly when the elements split
    into ``n`` triples each summing to ``L``.
    """
    sizes = np.asarray(sizes, dtype=float)
    if sizes.ndim != 1 or sizes.size == 0 or sizes.size % 3:
        raise BadSizes(f"need 3n sizes for some n >= 1, got {sizes.size}")
    if np.any(sizes <= 0) or not L > 0:
        raise BadSizes("sizes and L must be positive")
    n = sizes.size // 3
    if abs(sizes.sum() - n * L) > 1e-9:
        raise BadSizes(f"sizes sum to {sizes.sum():g}, expected n*L = {n * L:g}")
    return JamInstance(np.full(n, float(L)), np.full(n, 3), sizes)
