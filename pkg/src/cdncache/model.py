"""Problem instances: server classes, content catalogs and derived load.

Two fleet descriptions are supported. In *fraction* mode each server class
carries the share ``alpha`` of the ``n`` servers it accounts for; this is the
natural input of the fluid model. In *explicit* mode each class carries an
integer ``count`` and the classes are expanded, in order, into a concrete list
of servers; the greedy placement algorithm needs this. Either mode converts to
the other (see :meth:`SystemSpec.fleet` and :attr:`SystemSpec.alpha`).

Content ids are 1-based in every public structure (allocations, traces,
configuration keys); numpy arrays indexed by content use position ``c - 1``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import InfeasibleSpec, MalformedConfig

__all__ = [
    "ServerClass",
    "Catalog",
    "SystemSpec",
    "Fleet",
    "zipf_rates",
    "system_load",
    "build_spec",
    "spec_to_dict",
    "load_spec",
    "largest_remainder",
]

FRACTION_TOL = 1e-9


def _frozen(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ServerClass:
    """A group of identical servers.

    Exactly one of ``fraction`` (asymptotic mode) or ``count`` (explicit mode)
    must be given.
    """

    bandwidth: int
    cache_size: int
    fraction: float | None = None
    count: int | None = None

    def __post_init__(self):
        if int(self.bandwidth) != self.bandwidth or self.bandwidth < 1:
            raise InfeasibleSpec(f"bandwidth must be a positive integer, got {self.bandwidth!r}")
        if int(self.cache_size) != self.cache_size or self.cache_size < 1:
            raise InfeasibleSpec(f"cache_size must be a positive integer, got {self.cache_size!r}")
        if (self.fraction is None) == (self.count is None):
            raise MalformedConfig("a server class needs exactly one of 'fraction' or 'count'")
        if self.fraction is not None and not 0.0 <= self.fraction <= 1.0:
            raise InfeasibleSpec(f"fraction must lie in [0, 1], got {self.fraction!r}")
        if self.count is not None and (int(self.count) != self.count or self.count < 0):
            raise InfeasibleSpec(f"count must be a nonnegative integer, got {self.count!r}")

    @property
    def key(self) -> tuple[int, int]:
        return (int(self.bandwidth), int(self.cache_size))


@dataclass(frozen=True, eq=False)
class Catalog:
    """Content arrival rates ``rates[c - 1]`` (requests per unit time)."""

    rates: np.ndarray

    def __post_init__(self):
        rates = np.asarray(self.rates, dtype=float)
        if rates.ndim != 1 or rates.size == 0:
            raise MalformedConfig("catalog rates must be a non-empty vector")
        if not np.all(np.isfinite(rates)) or np.any(rates <= 0):
            raise InfeasibleSpec("all content rates must be finite and > 0")
        object.__setattr__(self, "rates", _frozen(rates))

    def __eq__(self, other):
        if not isinstance(other, Catalog):
            return NotImplemented
        return np.array_equal(self.rates, other.rates)

    __hash__ = None

    @property
    def m(self) -> int:
        return int(self.rates.size)

    @property
    def normalized(self) -> np.ndarray:
        return self.rates / self.rates.sum()


@dataclass(frozen=True)
class Fleet:
    """Per-server arrays of an explicit fleet; ``class_index`` points into ``SystemSpec.classes``."""

    bandwidths: np.ndarray
    cache_sizes: np.ndarray
    class_index: np.ndarray

    @property
    def n(self) -> int:
        return int(self.bandwidths.size)


def largest_remainder(weights: Sequence[float], total: int) -> np.ndarray:
    """Split ``total`` into integers proportional to ``weights``.

    Floors first, then hands the leftover units to the largest fractional
    parts (lowest index first on ties).
    """
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    raw = w * total
    base = np.floor(raw + 1e-12).astype(int)
    short = total - int(base.sum())
    if short > 0:
        order = np.argsort(-(raw - base), kind="stable")
        base[order[:short]] += 1
    return base


@dataclass(frozen=True)
class SystemSpec:
    """A full instance: ``n`` servers split into classes, plus a catalog.

    Attributes
    ----------
    n : int
        Number of servers.
    classes : tuple of ServerClass
        All in fraction mode or all in explicit (count) mode.
    catalog : Catalog
        Total arrival rates ``lambda_c``; the per-server rates used by the
        fluid model are ``lambda_c / n``.
    """

    n: int
    classes: tuple[ServerClass, ...]
    catalog: Catalog
    _alpha: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise InfeasibleSpec(f"n must be a positive integer, got {self.n!r}")
        object.__setattr__(self, "classes", tuple(self.classes))
        if not self.classes:
            raise MalformedConfig("at least one server class is required")
        modes = {c.count is not None for c in self.classes}
        if len(modes) != 1:
            raise MalformedConfig("server classes mix 'fraction' and 'count'")
        if self.explicit:
            total = sum(c.count for c in self.classes)
            if total != self.n:
                raise InfeasibleSpec(f"class counts sum to {total}, expected n={self.n}")
            alpha = np.array([c.count / self.n for c in self.classes])
        else:
            alpha = np.array([c.fraction for c in self.classes], dtype=float)
            if abs(alpha.sum() - 1.0) > FRACTION_TOL:
                raise InfeasibleSpec(f"class fractions sum to {alpha.sum():.12g}, expected 1")
        object.__setattr__(self, "_alpha", _frozen(alpha))

    @property
    def explicit(self) -> bool:
        return self.classes[0].count is not None

    @property
    def m(self) -> int:
        return self.catalog.m

    @property
    def rates(self) -> np.ndarray:
        return self.catalog.rates

    @property
    def alpha(self) -> np.ndarray:
        """Fraction of servers in each entry of ``classes``."""
        return self._alpha

    @property
    def class_fractions(self) -> dict[tuple[int, int], float]:
        """``alpha_ij`` keyed by ``(bandwidth, cache_size)``; repeated keys are merged."""
        out: dict[tuple[int, int], float] = {}
        for cls, a in zip(self.classes, self.alpha):
            out[cls.key] = out.get(cls.key, 0.0) + float(a)
        return out

    @property
    def per_server_rates(self) -> np.ndarray:
        return self.catalog.rates / self.n

    @property
    def total_rate(self) -> float:
        """Per-server total rate ``sum_c lambda_c / n``."""
        return float(self.per_server_rates.sum())

    @property
    def capacity(self) -> float:
        """Per-server bandwidth ``sum_ij alpha_ij U_i``."""
        return float(sum(a * c.bandwidth for a, c in zip(self.alpha, self.classes)))

    @property
    def load(self) -> float:
        return system_load(self)

    def counts(self) -> np.ndarray:
        """Server count per class (largest-remainder rounding in fraction mode)."""
        if self.explicit:
            return np.array([c.count for c in self.classes], dtype=int)
        return largest_remainder(self.alpha, self.n)

    def fleet(self) -> Fleet:
        """Expand the classes, in order, into per-server arrays."""
        counts = self.counts()
        idx = np.repeat(np.arange(len(self.classes)), counts)
        bw = np.array([c.bandwidth for c in self.classes], dtype=int)[idx]
        cs = np.array([c.cache_size for c in self.classes], dtype=int)[idx]
        return Fleet(_frozen(bw, int), _frozen(cs, int), _frozen(idx, int))

    def to_explicit(self) -> "SystemSpec":
        if self.explicit:
            return self
        classes = tuple(
            ServerClass(c.bandwidth, c.cache_size, count=int(k))
            for c, k in zip(self.classes, self.counts())
        )
        return SystemSpec(self.n, classes, self.catalog)

    def with_rates(self, rates) -> "SystemSpec":
        return SystemSpec(self.n, self.classes, Catalog(rates))

    @classmethod
    def from_servers(cls, bandwidths, cache_sizes, rates) -> "SystemSpec":
        """Explicit-fleet spec preserving the given server order.

        Consecutive servers with equal ``(bandwidth, cache_size)`` share a class.
        """
        bandwidths = list(bandwidths)
        cache_sizes = list(cache_sizes)
        if len(bandwidths) != len(cache_sizes) or not bandwidths:
            raise MalformedConfig("bandwidths and cache_sizes must be equal-length, non-empty")
        classes: list[ServerClass] = []
        run_key, run_len = None, 0
        for key in zip(bandwidths, cache_sizes):
            if key == run_key:
                run_len += 1
                continue
            if run_key is not None:
                classes.append(ServerClass(*run_key, count=run_len))
            run_key, run_len = key, 1
        classes.append(ServerClass(*run_key, count=run_len))
        return cls(len(bandwidths), tuple(classes), Catalog(rates))


def zipf_rates(m: int, eta: float) -> np.ndarray:
    """Normalized Zipf popularities ``c**-eta / sum_c' c'**-eta`` for ``c = 1..m``."""
    if int(m) != m or m < 1:
        raise ValueError(f"m must be a positive integer, got {m!r}")
    if not eta >= 0:
        raise ValueError(f"eta must be nonnegative, got {eta!r}")
    w = np.arange(1, int(m) + 1, dtype=float) ** (-float(eta))
    return w / w.sum()


def system_load(spec: SystemSpec) -> float:
    """``rho = sum_c lambda_c / (n * sum_ij alpha_ij U_i)``."""
    return float(spec.rates.sum() / (spec.n * spec.capacity))


def _parse_class(raw: Mapping[str, Any]) -> ServerClass:
    if not isinstance(raw, Mapping):
        raise MalformedConfig(f"server class must be an object, got {type(raw).__name__}")
    try:
        bw, cs = raw["bandwidth"], raw["cache_size"]
    except KeyError as exc:
        raise MalformedConfig(f"server class missing field {exc.args[0]!r}") from None
    frac = raw.get("fraction")
    if isinstance(frac, str):
        frac = float(Fraction(frac))
    return ServerClass(bw, cs, fraction=frac, count=raw.get("count"))


def build_spec(raw: Mapping[str, Any] | str) -> SystemSpec:
    """Validate an instance document (a mapping or JSON text) into a :class:`SystemSpec`.

    The catalog is either ``{"rates": [...]}`` or
    ``{"generator": {"m", "eta", "total_rate" | "rho"}}``. With ``rho`` the
    Zipf rates are scaled so the resulting load equals ``rho``.
    """
    if isinstance(raw, str):
        try:
            raw = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise MalformedConfig(f"instance is not valid JSON: {exc}") from None
    if not isinstance(raw, Mapping):
        raise MalformedConfig("instance document must be an object")
    for key in ("classes", "catalog"):
        if key not in raw:
            raise MalformedConfig(f"instance missing field {key!r}")
    classes = tuple(_parse_class(c) for c in raw["classes"])
    if not classes:
        raise MalformedConfig("instance needs at least one server class")
    if "n" in raw:
        n = raw["n"]
    elif all(c.count is not None for c in classes):
        n = sum(c.count for c in classes)
    else:
        raise MalformedConfig("instance missing field 'n'")

    cat = raw["catalog"]
    if not isinstance(cat, Mapping):
        raise MalformedConfig("catalog must be an object")
    if "rates" in cat:
        rates = np.asarray(cat["rates"], dtype=float)
        return SystemSpec(n, classes, Catalog(rates))
    if "generator" not in cat:
        raise MalformedConfig("catalog needs 'rates' or 'generator'")
    gen = cat["generator"]
    try:
        popularity = zipf_rates(gen["m"], gen.get("eta", 0.0))
    except KeyError as exc:
        raise MalformedConfig(f"generator missing field {exc.args[0]!r}") from None
    except ValueError as exc:
        raise InfeasibleSpec(str(exc)) from None
    if ("rho" in gen) == ("total_rate" in gen):
        raise MalformedConfig("generator needs exactly one of 'rho' or 'total_rate'")
    if "rho" in gen:
        if not gen["rho"] > 0:
            raise InfeasibleSpec("rho must be > 0")
        # rates are placed after validating the fleet so capacity is known
        probe = SystemSpec(n, classes, Catalog(popularity))
        total = float(gen["rho"]) * probe.n * probe.capacity
    else:
        total = float(gen["total_rate"])
        if not total > 0:
            raise InfeasibleSpec("total_rate must be > 0")
    return SystemSpec(n, classes, Catalog(popularity * total))


def spec_to_dict(spec: SystemSpec) -> dict:
    """Serialize to the instance document format with explicit rates."""
    classes = []
    for c in spec.classes:
        entry: dict[str, Any] = {"bandwidth": int(c.bandwidth), "cache_size": int(c.cache_size)}
        if c.count is not None:
            entry["count"] = int(c.count)
        else:
            entry["fraction"] = float(c.fraction)
        classes.append(entry)
    return {"n": int(spec.n), "classes": classes, "catalog": {"rates": spec.rates.tolist()}}


def load_spec(path) -> SystemSpec:
    with open(path) as fh:
        return build_spec(fh.read())
