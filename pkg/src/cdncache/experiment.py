"""Parameter sweeps over the simulator, with CSV, manifest and SVG output.

A plan expands into grid points; every ``(point, replication)`` pair gets a
seed from :func:`derive_seed` and yields one CSV row. The manifest records
the parameters, seed and outputs of each row, so :func:`run_point` on a
manifest entry reproduces the row exactly.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
import subprocess
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .alloc import allocate
from .fluid import per_content_y, stationary
from .model import build_spec
from .sim import simulate
from .svg import line_chart

__all__ = [
    "PLAN_NAMES",
    "DEFAULTS",
    "CSV_FIELDS",
    "ExperimentPlan",
    "ExperimentResult",
    "derive_seed",
    "default_plan",
    "make_spec",
    "run_point",
    "run_experiment",
    "load_plan",
]

PLAN_NAMES = ("n-sweep", "rho-sweep", "eta-sweep", "m-sweep", "table1", "table2", "fluid-vs-sim")
CSV_FIELDS = ("policy", "matching", "n", "m", "rho", "eta", "dist", "seed", "arrivals", "blocked", "blocking_prob")
DEFAULTS: dict[str, Any] = {
    "policy": "p2p",
    "matching": "ras",
    "n": 400,
    "m": 500,
    "rho": 0.8,
    "eta": 2.0,
    "d": 2,
    "u": 1,
    "dist": "exp",
    "arrivals": 160_000,
    "warmup": 0.0,
}

_MASK64 = (1 << 64) - 1
REPLICATION_BITS = 24


def _mix64(z: int) -> int:
    # splitmix64 finalizer: a bijection on 64-bit words
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(base: int, point_index: int, replication: int) -> int:
    """Seed of one ``(point, replication)`` pair.

    ``mix(mix(base) XOR (point_index << 24 | replication))`` with the
    splitmix64 finalizer. Both steps are bijective for a fixed base, so seeds
    are distinct whenever ``replication < 2**24`` and ``point_index < 2**40``.
    """
    if not 0 <= replication < (1 << REPLICATION_BITS):
        raise ValueError(f"replication must lie in [0, 2**{REPLICATION_BITS})")
    if not 0 <= point_index < (1 << (64 - REPLICATION_BITS)):
        raise ValueError("point_index out of range")
    word = (point_index << REPLICATION_BITS) | replication
    return _mix64(_mix64(int(base) & _MASK64) ^ word)


@dataclass
class ExperimentPlan:
    """A named sweep.

    ``grid`` maps parameter names to lists; points are their cartesian
    product laid over :data:`DEFAULTS` and ``fixed``. ``points`` lists
    explicit parameter dicts instead (used when the grid is not a product).
    """

    name: str
    grid: dict[str, list] = field(default_factory=dict)
    points: list[dict] = field(default_factory=list)
    fixed: dict[str, Any] = field(default_factory=dict)
    replications: int = 5
    base_seed: int = 1
    output_dir: str = "results"
    workers: int = 1
    sample_interval: float = 0.01
    horizon: float = 10.0

    def validate(self) -> None:
        if self.name not in PLAN_NAMES:
            raise ValueError(f"unknown plan {self.name!r}; choose from {', '.join(PLAN_NAMES)}")
        if not isinstance(self.replications, int) or self.replications < 1:
            raise ValueError("replications must be an integer >= 1")
        if not self.grid and not self.points:
            raise ValueError("plan has an empty grid")
        for key, values in self.grid.items():
            if not isinstance(values, (list, tuple)) or len(values) == 0:
                raise ValueError(f"grid axis {key!r} is empty")
        unknown = {k for p in self.expand() for k in p} - set(DEFAULTS)
        if unknown:
            raise ValueError(f"unknown parameters {sorted(unknown)}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def expand(self) -> list[dict]:
        base = {**DEFAULTS, **self.fixed}
        if self.points:
            pts = [{**base, **p} for p in self.points]
        else:
            keys = list(self.grid)
            pts = [{**base, **dict(zip(keys, combo))} for combo in itertools.product(*self.grid.values())]
        if self.name == "fluid-vs-sim" and "arrivals" not in self.fixed and "arrivals" not in self.grid:
            # enough arrivals to cover the horizon with 5% slack
            for p in pts:
                p["arrivals"] = int(1.05 * self.horizon * p["rho"] * p["n"] * p["u"])
        return pts

    def to_dict(self) -> dict:
        return asdict(self)


def default_plan(name: str, **overrides) -> ExperimentPlan:
    """The standard sweeps with the default system (m=500, eta=2, d=2, U=1)."""
    policies = ["greedy", "p2p", "unif"]
    kw: dict[str, Any]
    if name == "table1":
        kw = dict(grid={"n": [10, 20, 50, 200, 1000, 2000]}, fixed={"policy": "p2p", "rho": 0.8})
    elif name == "table2":
        pts = [(400, 0.4), (400, 0.8), (400, 1.2), (400, 1.6), (1000, 0.4)]
        kw = dict(
            points=[
                {"n": n, "rho": rho, "dist": dist}
                for n, rho in pts
                for dist in ("exp", "const", "lognorm", "pareto")
            ],
            fixed={"policy": "greedy"},
        )
    elif name == "n-sweep":
        kw = dict(grid={"policy": policies, "n": [10, 20, 50, 100, 200, 400, 1000, 2000]})
    elif name == "rho-sweep":
        kw = dict(grid={"policy": policies, "rho": [0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6]})
    elif name == "eta-sweep":
        kw = dict(grid={"policy": policies, "eta": [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0]})
    elif name == "m-sweep":
        kw = dict(grid={"policy": policies, "m": [50, 100, 200, 500, 1000]})
    elif name == "fluid-vs-sim":
        kw = dict(
            grid={"rho": [1.2]},
            fixed={"policy": "greedy", "n": 1000, "d": 1},
            replications=8,
        )
    else:
        raise ValueError(f"unknown plan {name!r}; choose from {', '.join(PLAN_NAMES)}")
    fixed = {**kw.pop("fixed", {}), **overrides.pop("fixed", {})}
    kw.update(overrides)
    return ExperimentPlan(name=name, fixed=fixed, **kw)


def load_plan(raw: Mapping[str, Any] | str) -> ExperimentPlan:
    """Build a plan from a JSON document; keys not given fall back to :func:`default_plan`."""
    if isinstance(raw, str):
        raw = json.loads(raw)
    raw = dict(raw)
    name = raw.pop("name")
    plan = default_plan(name)
    if "grid" in raw and "points" not in raw:
        plan.points = []
    if "points" in raw and "grid" not in raw:
        plan.grid = {}
    for key, value in raw.items():
        if not hasattr(plan, key):
            raise ValueError(f"unknown plan field {key!r}")
        setattr(plan, key, value)
    return plan


def make_spec(params: Mapping[str, Any]):
    """Homogeneous fleet of ``n`` servers with Zipf(eta) rates at load ``rho``."""
    return build_spec(
        {
            "n": int(params["n"]),
            "classes": [{"bandwidth": int(params["u"]), "cache_size": int(params["d"]), "count": int(params["n"])}],
            "catalog": {"generator": {"m": int(params["m"]), "eta": float(params["eta"]), "rho": float(params["rho"])}},
        }
    )


def run_point(params: Mapping[str, Any], seed: int, sample_interval: float | None = None) -> dict:
    """Allocate and simulate one grid point; returns the output columns.

    With ``sample_interval`` the sampled trajectory is included under
    ``"trajectory"`` as ``(t, y)`` lists.
    """
    if params.get("matching", "ras") != "ras":
        raise ValueError(f"unsupported matching {params['matching']!r}")
    spec = make_spec(params)
    alloc = allocate(params["policy"], spec, seed)
    metrics = simulate(
        spec,
        alloc,
        dist=params["dist"],
        num_arrivals=int(params["arrivals"]),
        seed=seed,
        warmup_fraction=float(params["warmup"]),
        sample_interval=sample_interval,
    )
    out = {
        "arrivals": int(metrics.arrivals),
        "blocked": int(metrics.blocked),
        "blocking_prob": float(metrics.blocking_probability),
    }
    if sample_interval:
        out["trajectory"] = [metrics.trajectory_t.tolist(), metrics.trajectory_y.tolist()]
    return out


def csv_row(params: Mapping[str, Any], seed: int, outputs: Mapping[str, Any]) -> dict:
    row = {k: params[k] for k in CSV_FIELDS[:7]}
    row.update(seed=seed, arrivals=outputs["arrivals"], blocked=outputs["blocked"], blocking_prob=repr(outputs["blocking_prob"]))
    return row


def _git_describe() -> str:
    try:
        res = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            capture_output=True, text=True, timeout=10, cwd=Path(__file__).parent,
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return res.stdout.strip() or "unknown"


def _task(args):
    params, seed, interval = args
    try:
        return True, run_point(params, seed, interval)
    except Exception as exc:  # recorded per point, the sweep continues
        return False, f"{type(exc).__name__}: {exc}"


@dataclass
class ExperimentResult:
    csv_path: Path
    manifest_path: Path
    figures: list[Path]
    rows: list[dict]
    failures: list[dict]

    @property
    def ok(self) -> bool:
        return not self.failures


def run_experiment(plan: ExperimentPlan) -> ExperimentResult:
    """Run every ``(point, replication)`` of ``plan`` and write results.

    Writes ``<name>.csv``, ``<name>.manifest.json`` and, when the plan has a
    natural figure, ``<name>.svg`` into ``plan.output_dir``. The fluid-vs-sim
    plan also writes ``t,y`` trajectory CSVs for each run and for the fluid
    limit. Errors at a point are recorded in the manifest and do not stop
    the sweep.
    """
    plan.validate()
    out_dir = Path(plan.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    points = plan.expand()
    interval = plan.sample_interval if plan.name == "fluid-vs-sim" else None
    tasks = [
        (i, r, p, derive_seed(plan.base_seed, i, r))
        for i, p in enumerate(points)
        for r in range(plan.replications)
    ]
    payload = [(p, seed, interval) for _, _, p, seed in tasks]
    if plan.workers > 1:
        with ProcessPoolExecutor(max_workers=plan.workers) as pool:
            results = list(pool.map(_task, payload))  # map preserves task order
    else:
        results = [_task(a) for a in payload]

    csv_path = out_dir / f"{plan.name}.csv"
    rows, failures, manifest_rows = [], [], []
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        writer.writeheader()
        for (i, r, params, seed), (ok, res) in zip(tasks, results):
            entry = {"point": i, "replication": r, "params": dict(params), "seed": seed}
            if not ok:
                failures.append({**entry, "error": res})
                continue
            traj = res.pop("trajectory", None)
            if traj is not None:
                _write_ty(out_dir / f"{plan.name}.traj.p{i}.r{r}.csv", *traj)
            row = csv_row(params, seed, res)
            writer.writerow(row)
            rows.append(row)
            manifest_rows.append({**entry, "outputs": res})

    manifest = {
        "plan": plan.to_dict(),
        "git_describe": _git_describe(),
        "rows": manifest_rows,
        "failures": failures,
    }
    manifest_path = out_dir / f"{plan.name}.manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=1))
    figures = _figures(plan, points, rows, out_dir)
    return ExperimentResult(csv_path, manifest_path, figures, rows, failures)


def _write_ty(path: Path, t, y) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("t", "y"))
        w.writerows(zip((repr(float(a)) for a in t), (repr(float(b)) for b in y)))


def _mean_by(rows, key, group):
    acc: dict[tuple, list[float]] = {}
    for row in rows:
        acc.setdefault((row[group], row[key]), []).append(float(row["blocking_prob"]))
    series: dict[Any, tuple[list, list]] = {}
    for (g, x), vals in sorted(acc.items(), key=lambda kv: (str(kv[0][0]), kv[0][1])):
        xs, ys = series.setdefault(g, ([], []))
        xs.append(x)
        ys.append(float(np.mean(vals)))
    return [(str(g), xs, ys) for g, (xs, ys) in series.items()]


def _figures(plan: ExperimentPlan, points, rows, out_dir: Path) -> list[Path]:
    if not rows:
        return []
    path = out_dir / f"{plan.name}.svg"
    axis = {"n-sweep": "n", "rho-sweep": "rho", "eta-sweep": "eta", "m-sweep": "m"}
    if plan.name in axis:
        x = axis[plan.name]
        svg = line_chart(_mean_by(rows, x, "policy"), title=f"Blocking vs {x}", xlabel=x,
                         ylabel="blocking probability", logx=x == "n")
    elif plan.name == "table1":
        series = []
        for label, xs, ys in _mean_by(rows, "n", "rho"):
            gap = [abs(y - max(0.0, 1 - 1 / float(label))) for y in ys]
            series.append((f"rho={label}", xs, gap))
            if len(xs) >= 2:
                c = gap[0] * math.sqrt(xs[0])
                series.append(("c n^-1/2", xs, [c / math.sqrt(v) for v in xs]))
        svg = line_chart(series, title="|P_block - P_opt| vs n", xlabel="n",
                         ylabel="|P - P_opt|", logx=True, logy=True)
    elif plan.name == "table2":
        svg = line_chart(_mean_by(rows, "rho", "dist"), title="Blocking by service law (n=400 and 1000)",
                         xlabel="rho", ylabel="blocking probability")
    else:
        return _fluid_figure(plan, points, out_dir)
    path.write_text(svg)
    return [path]


def _fluid_figure(plan: ExperimentPlan, points, out_dir: Path) -> list[Path]:
    figures = []
    for i, params in enumerate(points):
        spec = make_spec(params)
        try:
            caps = stationary(spec, params["policy"]).per_content
        except Exception:  # no closed form for this regime
            continue
        t = np.arange(0.0, plan.horizon + 1e-12, plan.sample_interval)
        fluid = sum(per_content_y(lam, cap, 0.0, t) for lam, cap in zip(spec.per_server_rates, caps))
        _write_ty(out_dir / f"{plan.name}.fluid.p{i}.csv", t, fluid)
        paths = sorted(out_dir.glob(f"{plan.name}.traj.p{i}.r*.csv"))
        sims = [np.loadtxt(p, delimiter=",", skiprows=1, ndmin=2) for p in paths]
        series = [("fluid", t.tolist(), fluid.tolist())]
        if sims:
            k = min(len(s) for s in sims)
            mean = np.mean([s[:k, 1] for s in sims], axis=0)
            series.insert(0, (f"sim mean of {len(sims)}", sims[0][:k, 0].tolist(), mean.tolist()))
        path = out_dir / f"{plan.name}.p{i}.svg"
        path.write_text(line_chart(series, title=f"y(t), rho={params['rho']}", xlabel="t", ylabel="y"))
        figures.append(path)
    return figures
