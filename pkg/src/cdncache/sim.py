"""Discrete-event simulation of the finite loss caching system under RAS.

Requests of content ``c`` arrive as a Poisson stream of rate ``lambda_c``.
The Random Available Server (RAS) dispatcher keeps, for every content, the
list of servers that store it and still have a free service slot; an arrival
goes to a uniform member of that list, or is blocked when the list is empty.
Accepted requests are never moved and leave after an i.i.d. unit-mean service
time.

Randomness comes from a PCG64 generator. The seed is expanded with
``numpy.random.SeedSequence(seed).spawn(4)`` into four independent streams
(inter-arrival times, content labels, RAS picks, service times), so a run is
a pure function of ``(spec, alloc, dist, num_arrivals, seed)`` on any
platform numpy supports.
"""

from __future__ import annotations

import enum
import heapq
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import AllocationMismatch
from .jam import Allocation
from .model import SystemSpec

__all__ = [
    "ServiceDist",
    "sample_service",
    "SimState",
    "ConfigState",
    "Metrics",
    "ras_match",
    "occupancy_snapshot",
    "simulate",
    "erlang_b",
]

LOGNORM_MU = -0.5
LOGNORM_SIGMA = 1.0
PARETO_SHAPE = 10.0
PARETO_SCALE = 0.9


class ServiceDist(str, enum.Enum):
    """Unit-mean service time laws."""

    EXP = "exp"
    CONST = "const"
    LOGNORM = "lognorm"
    PARETO = "pareto"


def sample_service(dist: ServiceDist | str, rng: np.random.Generator, size=None):
    """Draw service durations.

    ``lognorm`` is ``exp(N(-0.5, 1))`` and ``pareto`` has density
    ``10 * 0.9**10 / x**11`` on ``x >= 0.9``; both have mean 1.
    """
    dist = ServiceDist(dist)
    if dist is ServiceDist.EXP:
        return rng.exponential(1.0, size)
    if dist is ServiceDist.CONST:
        return 1.0 if size is None else np.ones(size)
    if dist is ServiceDist.LOGNORM:
        return rng.lognormal(LOGNORM_MU, LOGNORM_SIGMA, size)
    # numpy's pareto is the Lomax law; shift by one for the classical Pareto
    return PARETO_SCALE * (1.0 + rng.pareto(PARETO_SHAPE, size))


def erlang_b(servers: int, offered_load: float) -> float:
    """Erlang-B blocking probability of an M/G/c/c loss system."""
    b = 1.0
    for k in range(1, servers + 1):
        b = offered_load * b / (k + offered_load * b)
    return b


class SimState:
    """Occupancy of every server and the RAS availability lists.

    Server ``s`` (0-based internally) belongs to ``avail[c]`` exactly when it
    stores content ``c`` and ``busy[s] < bandwidth[s]``. Lists support O(1)
    insertion and swap-removal through ``pos[c][s]``.
    """

    def __init__(self, bandwidths: Sequence[int], stored: Sequence[Sequence[int]], m: int):
        self.bandwidth = [int(u) for u in bandwidths]
        self.stored = [tuple(sorted(c - 1 for c in k)) for k in stored]
        self.busy = [0] * len(self.bandwidth)
        self.m = m
        self.avail: list[list[int]] = [[] for _ in range(m)]
        self.pos: list[dict[int, int]] = [{} for _ in range(m)]
        for s, contents in enumerate(self.stored):
            if self.bandwidth[s] > 0:
                for c in contents:
                    self._enter(s, c)
        self.clock = 0.0

    @property
    def n(self) -> int:
        return len(self.bandwidth)

    @property
    def in_service(self) -> int:
        return sum(self.busy)

    def _enter(self, s: int, c: int) -> None:
        lst = self.avail[c]
        self.pos[c][s] = len(lst)
        lst.append(s)

    def _leave(self, s: int, c: int) -> None:
        lst, pos = self.avail[c], self.pos[c]
        i = pos.pop(s)
        last = lst.pop()
        if last != s:
            lst[i] = last
            pos[last] = i

    def accept(self, s: int) -> None:
        self.busy[s] += 1
        if self.busy[s] == self.bandwidth[s]:
            for c in self.stored[s]:
                self._leave(s, c)

    def release(self, s: int) -> None:
        if self.busy[s] == self.bandwidth[s]:
            for c in self.stored[s]:
                self._enter(s, c)
        self.busy[s] -= 1

    def available(self, content: int) -> list[int]:
        """1-based ids of servers that can take a request for 1-based ``content``."""
        return [s + 1 for s in self.avail[content - 1]]


def ras_match(state: SimState, content: int, rng: np.random.Generator) -> int | None:
    """Dispatch one request for 1-based ``content``.

    Returns the 1-based server chosen uniformly among available ones (and
    books the slot), or ``None`` when the request is blocked.
    """
    lst = state.avail[content - 1]
    if not lst:
        return None
    s = lst[int(rng.random() * len(lst))]
    state.accept(s)
    return s + 1


@dataclass
class ConfigState:
    """Tail occupancy fractions per configuration.

    ``x[(U, d, K)][r]`` is the fraction of servers with bandwidth ``U``,
    cache size ``d`` and stored set ``K`` that serve at least ``r`` requests,
    for ``r = 0..U``. ``weight[(U, d, K)]`` is the share of *all* servers in
    that configuration (``alpha_ij * q_ijK``).
    """

    x: dict[tuple[int, int, tuple[int, ...]], np.ndarray]
    weight: dict[tuple[int, int, tuple[int, ...]], float] = field(default_factory=dict)

    def in_W(self, tol: float = 1e-12) -> bool:
        for (u, _, _), xs in self.x.items():
            if xs.size != u + 1 or abs(xs[0] - 1.0) > tol:
                return False
            if np.any(xs < -tol) or np.any(xs > 1 + tol) or np.any(np.diff(xs) > tol):
                return False
        return True

    def total(self) -> float:
        """``sum_K weight_K * sum_{r>=1} x_{K,r}``: requests in service per server."""
        return float(sum(self.weight.get(k, 0.0) * xs[1:].sum() for k, xs in self.x.items()))


def occupancy_snapshot(state: SimState, spec: SystemSpec) -> ConfigState:
    """Group servers by (bandwidth, cache size, stored set) and tabulate occupancy tails."""
    fleet = spec.fleet()
    groups: dict[tuple[int, int, tuple[int, ...]], list[int]] = defaultdict(list)
    for s in range(state.n):
        key = (int(fleet.bandwidths[s]), int(fleet.cache_sizes[s]), tuple(c + 1 for c in state.stored[s]))
        groups[key].append(state.busy[s])
    x, weight = {}, {}
    for key, busy in groups.items():
        u = key[0]
        counts = np.bincount(np.asarray(busy, dtype=int), minlength=u + 1)[: u + 1]
        tail = counts[::-1].cumsum()[::-1]
        x[key] = tail / len(busy)
        weight[key] = len(busy) / state.n
    return ConfigState(x, weight)


@dataclass
class Metrics:
    """Counters of one run; ``arrivals``/``blocked`` exclude the warm-up prefix."""

    arrivals: int
    blocked: int
    per_content_arrivals: np.ndarray
    per_content_blocked: np.ndarray
    mean_in_service: float
    horizon: float
    total_arrivals: int
    trajectory_t: np.ndarray
    trajectory_y: np.ndarray
    snapshots: list[tuple[float, ConfigState]] = field(default_factory=list)

    @property
    def accepted(self) -> int:
        return self.arrivals - self.blocked

    @property
    def blocking_probability(self) -> float:
        return self.blocked / self.arrivals if self.arrivals else float("nan")


def _check_alloc(spec: SystemSpec, alloc: Allocation) -> None:
    if alloc.n != spec.n:
        raise AllocationMismatch(f"allocation covers {alloc.n} servers, fleet has {spec.n}")
    for s, k in enumerate(alloc.stored):
        bad = [c for c in k if not 1 <= c <= spec.m]
        if bad:
            raise AllocationMismatch(f"server {s + 1} stores unknown content(s) {bad}")


def simulate(
    spec: SystemSpec,
    alloc: Allocation,
    dist: ServiceDist | str = ServiceDist.EXP,
    num_arrivals: int = 160_000,
    seed: int = 0,
    warmup_fraction: float = 0.0,
    sample_interval: float | None = None,
    snapshot_times: Sequence[float] = (),
) -> Metrics:
    """Run the loss system for ``num_arrivals`` arrivals.

    Arrivals form one Poisson stream of rate ``sum_c lambda_c`` whose labels
    are drawn with probabilities ``lambda_c / sum lambda``. Blocking counts
    skip the first ``floor(warmup_fraction * num_arrivals)`` arrivals.
    ``sample_interval`` records ``(t, Y(t)/n)`` on a regular grid starting at
    0; ``snapshot_times`` records full :class:`ConfigState` tables.
    """
    if num_arrivals < 1:
        raise ValueError("num_arrivals must be >= 1")
    if not 0.0 <= warmup_fraction < 1.0:
        raise ValueError("warmup_fraction must lie in [0, 1)")
    _check_alloc(spec, alloc)
    dist = ServiceDist(dist)
    fleet = spec.fleet()
    state = SimState(fleet.bandwidths, alloc.stored, spec.m)
    n, m = spec.n, spec.m

    s_arr, s_lab, s_ras, s_svc = (
        np.random.Generator(np.random.PCG64(ss)) for ss in np.random.SeedSequence(seed).spawn(4)
    )
    rate = float(spec.rates.sum())
    arrival_times = np.cumsum(s_arr.exponential(1.0 / rate, num_arrivals))
    cdf = np.cumsum(spec.catalog.normalized)
    cdf[-1] = 1.0
    labels = np.searchsorted(cdf, s_lab.random(num_arrivals), side="right")
    picks = s_ras.random(num_arrivals)
    services = sample_service(dist, s_svc, num_arrivals)
    blocked_flags = np.zeros(num_arrivals, dtype=bool)

    # hot loop: RAS dispatch inlined (same logic as ras_match / SimState)
    avail, pos, busy, bandwidth, stored = state.avail, state.pos, state.busy, state.bandwidth, state.stored
    heap: list[tuple[float, int, int]] = []
    push, pop = heapq.heappush, heapq.heappop
    in_service = 0
    area = 0.0
    last_t = 0.0
    traj_t: list[float] = []
    traj_y: list[float] = []
    next_sample = 0.0 if sample_interval else math.inf
    snaps = sorted(snapshot_times)
    snap_i = 0
    next_snap = snaps[0] if snaps else math.inf
    snapshots: list[tuple[float, ConfigState]] = []

    def observe(t_event: float) -> None:
        nonlocal next_sample, next_snap, snap_i
        while next_sample <= t_event:
            traj_t.append(next_sample)
            traj_y.append(in_service / n)
            next_sample += sample_interval
        while next_snap <= t_event:
            snapshots.append((next_snap, occupancy_snapshot(state, spec)))
            snap_i += 1
            next_snap = snaps[snap_i] if snap_i < len(snaps) else math.inf

    watch = sample_interval is not None or bool(snaps)
    arrival_list = arrival_times.tolist()
    label_list = labels.tolist()
    pick_list = picks.tolist()
    service_list = services.tolist()
    for i in range(num_arrivals):
        t = arrival_list[i]
        while heap and heap[0][0] <= t:
            td, _, s = pop(heap)
            if watch:
                observe(td)
            area += in_service * (td - last_t)
            last_t = td
            if busy[s] == bandwidth[s]:
                for c in stored[s]:
                    lst = avail[c]
                    pos[c][s] = len(lst)
                    lst.append(s)
            busy[s] -= 1
            in_service -= 1
        if watch:
            observe(t)
        area += in_service * (t - last_t)
        last_t = t
        c = label_list[i]
        lst = avail[c]
        if not lst:
            blocked_flags[i] = True
            continue
        s = lst[int(pick_list[i] * len(lst))]
        busy[s] += 1
        in_service += 1
        if busy[s] == bandwidth[s]:
            for c2 in stored[s]:
                l2, p2 = avail[c2], pos[c2]
                j = p2.pop(s)
                last = l2.pop()
                if last != s:
                    l2[j] = last
                    p2[last] = j
        push(heap, (t + service_list[i], i, s))
    state.clock = last_t
    if watch:
        observe(last_t)

    start = int(math.floor(warmup_fraction * num_arrivals))
    lab = labels[start:]
    blk = blocked_flags[start:]
    return Metrics(
        arrivals=int(lab.size),
        blocked=int(blk.sum()),
        per_content_arrivals=np.bincount(lab, minlength=m),
        per_content_blocked=np.bincount(lab[blk], minlength=m),
        mean_in_service=area / last_t if last_t > 0 else 0.0,
        horizon=last_t,
        total_arrivals=num_arrivals,
        trajectory_t=np.asarray(traj_t),
        trajectory_y=np.asarray(traj_y),
        snapshots=snapshots,
    )
