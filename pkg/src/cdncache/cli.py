"""Command-line entry point.

Subcommands: ``solve``, ``allocate``, ``simulate``, ``fluid``,
``experiment`` and ``reduce-3p``. Exit status is 0 on success, 2 when the
input fails validation and 3 when a sweep finishes with failed points.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .alloc import PolicyKind, allocate
from .errors import CacheModelError
from .experiment import CSV_FIELDS, DEFAULTS, PLAN_NAMES, csv_row, default_plan, load_plan, make_spec, run_experiment
from .fluid import FluidModel, per_content_y, stationary
from .jam import Allocation, JamInstance, exact_solve, greedy_solve, three_partition_instance
from .model import build_spec
from .sim import ServiceDist, simulate

EXIT_OK, EXIT_INVALID, EXIT_PARTIAL = 0, 2, 3
JITTER = 1e-9


class _Usage(Exception):
    pass


def _read_json(path: str):
    text = sys.stdin.read() if path == "-" else Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise _Usage(f"{path}: not valid JSON ({exc})") from None


def _emit(obj, out: str | None) -> None:
    text = json.dumps(obj, indent=1)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _add_system_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("system (ignored with --instance)")
    g.add_argument("--instance", help="instance JSON file")
    g.add_argument("--n", type=int, default=DEFAULTS["n"], help="number of servers")
    g.add_argument("--m", type=int, default=DEFAULTS["m"], help="catalog size")
    g.add_argument("--rho", type=float, default=DEFAULTS["rho"], help="system load")
    g.add_argument("--eta", type=float, default=DEFAULTS["eta"], help="Zipf exponent")
    g.add_argument("--d", type=int, default=DEFAULTS["d"], help="cache size per server")
    g.add_argument("--u", type=int, default=DEFAULTS["u"], help="bandwidth per server")


def _system(args):
    if args.instance:
        return build_spec(_read_json(args.instance))
    return make_spec(vars(args))


def _jitter(spec):
    # strictly decreasing relative bump breaks popularity ties toward low ids
    m = spec.m
    return spec.with_rates(spec.rates * (1.0 + JITTER * (m - np.arange(m)) / m))


def _jam_instance(raw) -> JamInstance:
    if isinstance(raw, dict) and {"bandwidths", "cache_sizes", "rates"} <= raw.keys():
        try:
            return JamInstance(raw["bandwidths"], raw["cache_sizes"], raw["rates"])
        except ValueError as exc:
            raise _Usage(str(exc)) from None
    return JamInstance.from_spec(build_spec(raw))


def cmd_solve(args) -> int:
    inst = _jam_instance(_read_json(args.instance_file))
    if args.method == "greedy":
        res = greedy_solve(inst)
        out = {"value": res.value, "allocation": res.alloc.to_json(), "trace": [list(t) for t in res.trace]}
    else:
        res = exact_solve(inst, limit_n=args.limit_n, limit_m=args.limit_m)
        out = {"value": res.value, "allocation": res.alloc.to_json(), "trace": []}
    out["flows"] = [[s, c, z] for (s, c), z in sorted(res.flow.flows.items())]
    _emit(out, args.out)
    return EXIT_OK


def cmd_allocate(args) -> int:
    spec = _system(args)
    _emit(allocate(args.policy, spec, args.seed).to_json(), args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    spec = _system(args)
    if args.alloc:
        alloc = Allocation.from_json(_read_json(args.alloc), n=spec.n)
    else:
        alloc = allocate(args.policy, spec, args.seed)
    metrics = simulate(
        spec, alloc, dist=args.dist, num_arrivals=args.arrivals, seed=args.seed,
        warmup_fraction=args.warmup, sample_interval=args.sample_interval if args.trajectory else None,
    )
    params = {
        "policy": "custom" if args.alloc else args.policy, "matching": args.matching,
        "n": spec.n, "m": spec.m, "rho": spec.load, "eta": "" if args.instance else args.eta,
        "dist": args.dist,
    }
    row = csv_row(params, args.seed, {
        "arrivals": metrics.arrivals, "blocked": metrics.blocked,
        "blocking_prob": metrics.blocking_probability,
    })
    w = csv.DictWriter(sys.stdout, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    w.writerow(row)
    if args.trajectory:
        _write_ty(args.trajectory, metrics.trajectory_t, metrics.trajectory_y)
    return EXIT_OK


def _write_ty(path, t, y) -> None:
    fh = sys.stdout if path == "-" else open(path, "w", newline="")
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("t", "y"))
        w.writerows(zip((repr(float(a)) for a in t), (repr(float(b)) for b in y)))
    finally:
        if fh is not sys.stdout:
            fh.close()


def cmd_fluid(args) -> int:
    spec = _system(args)
    if args.jitter:
        spec = _jitter(spec)
    if args.method == "closed":
        st = stationary(spec, args.policy)
        t = np.arange(int(round(args.horizon / args.dt)) + 1) * args.dt
        y = sum(per_content_y(lam, cap, 0.0, t) for lam, cap in zip(spec.per_server_rates, st.per_content))
    else:
        model = FluidModel.from_spec(spec, args.policy, max_configs=args.max_configs)
        traj = model.integrate(model.empty_state(), args.horizon, args.dt)
        t, y = traj.times, traj.y
        if args.every > 1:
            t, y = t[:: args.every], y[:: args.every]
    _write_ty(args.out or "-", t, y)
    try:
        st = stationary(spec, args.policy)
        print(f"y_inf={st.y_inf:.6g} blocking_floor={st.blocking_floor:.6g}", file=sys.stderr)
    except CacheModelError:
        pass
    return EXIT_OK


def cmd_experiment(args) -> int:
    if args.plan_file:
        plan = load_plan(_read_json(args.plan_file))
    elif args.plan:
        plan = default_plan(args.plan)
    else:
        raise _Usage("give --plan NAME or --plan-file FILE")
    for attr in ("replications", "workers", "base_seed"):
        if getattr(args, attr) is not None:
            setattr(plan, attr, getattr(args, attr))
    if args.out:
        plan.output_dir = args.out
    if args.arrivals is not None:
        plan.fixed["arrivals"] = args.arrivals
    try:
        plan.validate()
    except ValueError as exc:
        raise _Usage(str(exc)) from None
    res = run_experiment(plan)
    print(f"wrote {res.csv_path} ({len(res.rows)} rows), {res.manifest_path}", file=sys.stderr)
    for f in res.failures:
        print(f"failed point {f['point']} rep {f['replication']}: {f['error']}", file=sys.stderr)
    return EXIT_OK if res.ok else EXIT_PARTIAL


def cmd_reduce(args) -> int:
    inst = three_partition_instance(args.sizes, args.L)
    out = {
        "bandwidths": inst.bandwidths.tolist(),
        "cache_sizes": inst.cache_sizes.tolist(),
        "rates": inst.rates.tolist(),
        "target": inst.n * args.L,
    }
    if args.solve:
        res = exact_solve(inst, limit_n=inst.n, limit_m=inst.m)
        out["exact_value"] = res.value
        out["partition_exists"] = bool(abs(res.value - out["target"]) <= 1e-9 * max(1.0, out["target"]))
    _emit(out, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cdncache", description="Cache allocation, loss simulation and fluid limits.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="greedy or exact JAM on an instance file")
    p.add_argument("instance_file")
    p.add_argument("--method", choices=("greedy", "exact"), default="greedy")
    p.add_argument("--limit-n", type=int, default=4)
    p.add_argument("--limit-m", type=int, default=4)
    p.add_argument("--out")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("allocate", help="sample a cache allocation")
    _add_system_flags(p)
    p.add_argument("--policy", choices=[k.value for k in PolicyKind], default="p2p")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_allocate)

    p = sub.add_parser("simulate", help="one simulation run, CSV row on stdout")
    _add_system_flags(p)
    p.add_argument("--policy", choices=[k.value for k in PolicyKind], default="p2p")
    p.add_argument("--alloc", help="allocation JSON instead of sampling one")
    p.add_argument("--matching", choices=("ras",), default="ras")
    p.add_argument("--dist", choices=[k.value for k in ServiceDist], default="exp")
    p.add_argument("--arrivals", type=int, default=DEFAULTS["arrivals"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--warmup", type=float, default=0.0, help="fraction of arrivals excluded from counts")
    p.add_argument("--trajectory", help="write sampled t,y CSV here ('-' for stdout)")
    p.add_argument("--sample-interval", type=float, default=0.01)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fluid", help="fluid-limit trajectory as t,y CSV")
    _add_system_flags(p)
    p.add_argument("--policy", choices=[k.value for k in PolicyKind], default="greedy")
    p.add_argument("--method", choices=("di", "closed"), default="di")
    p.add_argument("--horizon", type=float, default=10.0)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--every", type=int, default=10, help="keep every k-th step of the DI output")
    p.add_argument("--max-configs", type=int, default=200_000)
    p.add_argument("--jitter", action="store_true", help=f"break popularity ties by a relative {JITTER:g} perturbation")
    p.add_argument("--out")
    p.set_defaults(func=cmd_fluid)

    p = sub.add_parser("experiment", help="run a sweep plan")
    p.add_argument("--plan", choices=PLAN_NAMES)
    p.add_argument("--plan-file")
    p.add_argument("--out", help="output directory")
    p.add_argument("--replications", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--base-seed", type=int)
    p.add_argument("--arrivals", type=int)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("reduce-3p", help="JAM instance from a 3-partition question")
    p.add_argument("--sizes", type=float, nargs="+", required=True)
    p.add_argument("--L", type=float, required=True)
    p.add_argument("--solve", action="store_true", help="also run the exact solver")
    p.add_argument("--out")
    p.set_defaults(func=cmd_reduce)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (_Usage, CacheModelError, ValueError, KeyError, OSError, MemoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
