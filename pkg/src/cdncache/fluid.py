"""Fluid (mean-field) limit of the loss caching system under RAS.

The state holds, for each configuration ``(U, d, K)`` carried with positive
weight ``alpha * q``, the tail fractions ``w_r`` of its servers serving at
least ``r`` requests. The limiting drift is discontinuous where a
configuration saturates (``w_U = 1``), so the limit is a differential
inclusion; :func:`integrate` realizes its solution with projected explicit
Euler steps.

Arrays are padded to shape ``(L, U_max + 2)``: column 0 is fixed at 1 and
columns past a configuration's own ``U`` are fixed at 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np
from scipy import sparse

from .alloc import PolicyKind, config_fractions, greedy_theta, MAX_CONFIGS
from .errors import BadInitial, DegenerateDenominator, StateEscapedW, UnsupportedRegime
from .model import SystemSpec
from .sim import ConfigState

__all__ = [
    "FluidModel",
    "Trajectory",
    "Stationary",
    "drift",
    "integrate",
    "per_content_y",
    "stationary",
    "stationary_values",
    "project_W",
]

ConfigKey = tuple[int, int, tuple[int, ...]]
SAT_TOL = 1e-12
DENSE_LIMIT = 50_000


def project_W(X: np.ndarray, bandwidths: np.ndarray) -> np.ndarray:
    """Clip to [0, 1], pin column 0 to 1, enforce a nonincreasing chain, zero past ``U``."""
    np.clip(X, 0.0, 1.0, out=X)
    X[:, 0] = 1.0
    np.minimum.accumulate(X, axis=1, out=X)
    X[np.arange(X.shape[1])[None, :] > bandwidths[:, None]] = 0.0
    return X


@dataclass
class Trajectory:
    """Fluid path on a time grid.

    ``y[k]`` is the per-server number of requests in service at
    ``times[k]``; ``per_content`` (singleton configurations only) and
    ``states`` are filled when requested.
    """

    times: np.ndarray
    y: np.ndarray
    per_content: np.ndarray | None = None
    states: list[np.ndarray] = field(default_factory=list)


class Stationary(NamedTuple):
    y_inf: float
    per_content: np.ndarray
    blocking_floor: float


class FluidModel:
    """Configurations, their weights and the per-server content rates.

    Parameters
    ----------
    rates : array_like
        Per-server rates ``lambda_bar_c`` (content ``c`` at position ``c-1``).
    weights : mapping
        ``(U, d, K) -> alpha_ij * q_ijK``; zero weights are dropped.
    """

    def __init__(self, rates: Sequence[float], weights: Mapping[ConfigKey, float]):
        self.rates = np.asarray(rates, dtype=float)
        items = [(k, float(v)) for k, v in weights.items() if v > 0]
        if not items:
            raise ValueError("no configuration carries positive weight")
        self.keys: list[ConfigKey] = [k for k, _ in items]
        self.weights = np.array([v for _, v in items])
        self.bandwidths = np.array([k[0] for k in self.keys], dtype=int)
        self.width = int(self.bandwidths.max()) + 2
        rows, cols = [], []
        for l, (_, _, K) in enumerate(self.keys):
            for c in K:
                rows.append(l)
                cols.append(c - 1)
        inc = sparse.csr_matrix(
            (np.ones(len(rows)), (rows, cols)), shape=(len(self.keys), self.rates.size)
        )
        if inc.shape[0] * inc.shape[1] <= DENSE_LIMIT:
            inc = inc.toarray()
        self.incidence = inc
        self._incidence_t = inc.T.copy() if isinstance(inc, np.ndarray) else inc.T.tocsr()
        self._r = np.arange(self.width, dtype=float)
        self._l_idx = np.arange(len(self.keys))
        self._inside = (np.arange(self.width)[None, :] >= 1) & (
            np.arange(self.width)[None, :] <= self.bandwidths[:, None]
        )
        self.singletons = all(len(k[2]) <= 1 for k in self.keys)

    @classmethod
    def from_spec(
        cls, spec: SystemSpec, policy: PolicyKind | str, max_configs: int = MAX_CONFIGS
    ) -> "FluidModel":
        alpha = spec.class_fractions
        q = config_fractions(policy, spec, max_configs=max_configs)
        return cls(spec.per_server_rates, {k: alpha[k[:2]] * v for k, v in q.items()})

    @property
    def num_configs(self) -> int:
        return len(self.keys)

    @property
    def capacity(self) -> float:
        return float(self.weights @ self.bandwidths)

    # -- state helpers -------------------------------------------------------
    def empty_state(self) -> np.ndarray:
        X = np.zeros((self.num_configs, self.width))
        X[:, 0] = 1.0
        return X

    def state_from_config(self, w: ConfigState) -> np.ndarray:
        X = self.empty_state()
        index = {k: l for l, k in enumerate(self.keys)}
        for key, xs in w.x.items():
            if key in index:
                X[index[key], : len(xs)] = xs
        return X

    def to_config(self, X: np.ndarray) -> ConfigState:
        return ConfigState(
            {k: X[l, : k[0] + 1].copy() for l, k in enumerate(self.keys)},
            {k: float(v) for k, v in zip(self.keys, self.weights)},
        )

    def in_W(self, X: np.ndarray, tol: float = 1e-12) -> bool:
        if np.any(np.abs(X[:, 0] - 1.0) > tol) or np.any(X < -tol) or np.any(X > 1 + tol):
            return False
        if np.any(np.diff(X, axis=1) > tol):
            return False
        return not np.any(np.abs(X[~self._inside & (np.arange(self.width)[None, :] > 0)]) > tol)

    def total(self, X: np.ndarray) -> float:
        """``y = sum_l weight_l * sum_{r>=1} w_{l,r}``."""
        return float(self.weights @ X[:, 1:].sum(axis=1))

    def per_content(self, X: np.ndarray) -> np.ndarray:
        """Requests in service per content; exact only for singleton configurations."""
        return self._incidence_t @ (self.weights * X[:, 1:].sum(axis=1))

    # -- dynamics ------------------------------------------------------------
    def drift(self, X: np.ndarray) -> np.ndarray:
        """Selected element of the set-valued drift at ``X``.

        Unsaturated configurations follow the mean-field drift: requests for
        content ``c`` split over configurations holding ``c`` in proportion
        to their share of available servers, and each busy slot completes at
        rate 1. At a saturated configuration the arrival term at ``r = U``
        is set to the incoming rate ``sum lambda_bar_c / weight`` of those of
        its contents that have no available server anywhere; the Euler step
        then overshoots and :func:`project_W` holds the coordinate at 1 as
        long as arrivals keep up with departures.
        """
        l_idx = self._l_idx
        top = X[l_idx, self.bandwidths]
        sat = top >= 1.0 - SAT_TOL
        free = self.weights * (1.0 - top)
        free[sat] = 0.0
        avail = self._incidence_t @ free  # per-content available mass
        starved = avail <= 0.0
        if starved.any():
            holders_unsat = self._incidence_t @ (~sat).astype(float)
            if np.any(starved & (holders_unsat > 0) & (self.rates > 0)):
                raise DegenerateDenominator("content has no available mass but an unsaturated holder")
        inv = np.where(starved, 0.0, self.rates / np.where(starved, 1.0, avail))
        coef = self.incidence @ inv  # sum_{c in K} lambda_bar_c / avail_c
        coef[sat] = 0.0

        H = np.zeros_like(X)
        diff_down = X[:, :-1] - X[:, 1:]  # w_{r} - w_{r+1}, r = 0..width-2
        H[:, 1:] = coef[:, None] * diff_down  # arrivals: coef * (w_{r-1} - w_r)
        H[:, 1:-1] -= self._r[None, 1:-1] * diff_down[:, 1:]  # departures: r (w_r - w_{r+1})
        if sat.any():
            push = (self.incidence @ np.where(starved, self.rates, 0.0)) / self.weights
            H[l_idx[sat], self.bandwidths[sat]] += push[sat]
        H[~self._inside] = 0.0
        return H

    def drift_bound(self) -> float:
        """``D = sqrt(sum_l (1 + U_l D_l^2))`` with ``D_l = sum_{c in K} lambda_bar_c / weight_l + max U``."""
        d_l = (self.incidence @ self.rates) / self.weights + self.bandwidths.max()
        return float(np.sqrt(np.sum(1.0 + self.bandwidths * d_l**2)))

    def integrate(
        self,
        X0: np.ndarray,
        horizon: float,
        dt: float,
        keep_content: bool = False,
        keep_states: bool = False,
    ) -> Trajectory:
        """Projected explicit Euler on ``[0, horizon]`` with step ``dt``.

        Projection keeps every iterate in W unless a non-finite value
        appears, which is checked each step; the final state is also checked
        against the full W conditions.
        """
        if not dt > 0:
            raise ValueError("dt must be > 0")
        X = np.array(X0, dtype=float)
        if X.shape != (self.num_configs, self.width):
            raise ValueError(f"state shape {X.shape} != {(self.num_configs, self.width)}")
        if not self.in_W(X, tol=1e-9):
            raise StateEscapedW("initial state is not in W")
        steps = int(round(horizon / dt))
        times = np.arange(steps + 1) * dt
        y = np.empty(steps + 1)
        content = np.empty((steps + 1, self.rates.size)) if keep_content else None
        states = []
        for k in range(steps + 1):
            if k:
                X += dt * self.drift(X)
                project_W(X, self.bandwidths)
                if not np.isfinite(X).all():
                    raise StateEscapedW(f"non-finite state at step {k}")
            y[k] = self.total(X)
            if keep_content:
                content[k] = self.per_content(X)
            if keep_states:
                states.append(X.copy())
        if not self.in_W(X):
            raise StateEscapedW("final state left W")
        return Trajectory(times, y, content, states)


def drift(w: ConfigState, q: Mapping[ConfigKey, float], spec: SystemSpec) -> ConfigState:
    """Drift of a configuration state, keyed like ``w``."""
    alpha = spec.class_fractions
    model = FluidModel(spec.per_server_rates, {k: alpha[k[:2]] * v for k, v in q.items()})
    H = model.drift(model.state_from_config(w))
    return ConfigState({k: H[l, : k[0] + 1] for l, k in enumerate(model.keys)}, dict(zip(model.keys, model.weights)))


def integrate(
    w0: ConfigState | None,
    q: Mapping[ConfigKey, float],
    spec: SystemSpec,
    horizon: float,
    dt: float,
    **kwargs,
) -> Trajectory:
    """Integrate from ``w0`` (``None`` means an empty system)."""
    alpha = spec.class_fractions
    model = FluidModel(spec.per_server_rates, {k: alpha[k[:2]] * v for k, v in q.items()})
    X0 = model.empty_state() if w0 is None else model.state_from_config(w0)
    return model.integrate(X0, horizon, dt, **kwargs)


def per_content_y(rate: float, cap: float, y0: float, t):
    """Closed-form occupancy of one content: ``min(rate + (y0 - rate) e^{-t}, cap)``."""
    if y0 > cap + 1e-15:
        raise BadInitial(f"initial occupancy {y0} exceeds capacity {cap}")
    t = np.asarray(t, dtype=float)
    free = rate + (y0 - rate) * np.exp(-t)
    out = np.where(free < cap, free, cap)
    return float(out) if out.ndim == 0 else out


def stationary_values(
    per_server_rates, rho: float, policy: PolicyKind | str, cache_sizes: Sequence[int] = (1,)
) -> Stationary:
    """Limiting occupancy for greedy, or p2p with unit caches.

    ``y_inf = min(lambda_bar, lambda_bar / rho)`` and the optimal blocking
    floor is ``(1 - 1/rho)^+``.
    """
    lam = np.asarray(per_server_rates, dtype=float)
    policy = PolicyKind(policy)
    if policy is PolicyKind.GREEDY:
        per = greedy_theta(lam, rho).theta
    elif policy is PolicyKind.P2P and all(int(d) == 1 for d in cache_sizes):
        per = np.minimum(lam, lam / rho)
    else:
        raise UnsupportedRegime(f"no fluid stationary point known for {policy.value} with caches {sorted(set(cache_sizes))}")
    total = float(lam.sum())
    y_inf = min(total, total / rho)
    return Stationary(y_inf, per, max(0.0, 1.0 - 1.0 / rho))


def stationary(spec: SystemSpec, policy: PolicyKind | str) -> Stationary:
    return stationary_values(
        spec.per_server_rates, spec.load, policy, [c.cache_size for c in spec.classes]
    )
