"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` (the summary section at
the end lists every criterion) or ``python tests/test_acceptance.py``.
"""

import time

import numpy as np
import pytest
from scipy.stats import chisquare

from cdncache.alloc import allocate, greedy_theta, sample_p2p, sample_unif
from cdncache.experiment import derive_seed, make_spec
from cdncache.fluid import FluidModel, per_content_y, stationary
from cdncache.jam import JamInstance, exact_solve, greedy_solve, three_partition_instance
from cdncache.model import Catalog, ServerClass, SystemSpec
from cdncache.jam import Allocation
from cdncache.sim import simulate

BASE_PARAMS = dict(m=500, eta=2.0, d=2, u=1, dist="exp", arrivals=160_000, warmup=0.0, matching="ras")
TABLE1 = {10: 0.2612, 20: 0.1837, 50: 0.1130, 200: 0.0501, 1000: 0.0220, 2000: 0.0148}
TABLE2_400 = {"exp": 0.0989, "const": 0.1028, "lognorm": 0.1006, "pareto": 0.0999}
TABLE2_1000 = 0.0916
BASE_SEED = 2024


def mean_blocking(params, reps, point):
    vals = []
    for r in range(reps):
        seed = derive_seed(BASE_SEED, point, r)
        spec = make_spec(params)
        alloc = allocate(params["policy"], spec, seed)
        res = simulate(spec, alloc, dist=params["dist"], num_arrivals=params["arrivals"], seed=seed)
        vals.append(res.blocking_probability)
    return float(np.mean(vals)), vals


def test_c01_half_approximation(acceptance):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst, ratios, violations = np.inf, [], 0
    for _ in range(600):
        n, m = rng.integers(1, 5, size=2)
        inst = JamInstance(rng.integers(1, 11, n), rng.integers(1, m + 1, n), rng.uniform(1, 10, m))
        g = greedy_solve(inst)
        e = exact_solve(inst)
        violations += len(g.flow.violations(inst.bandwidths, inst.rates, inst.cache_sizes))
        violations += len(e.flow.violations(inst.bandwidths, inst.rates, inst.cache_sizes))
        ratios.append(g.value / e.value)
        worst = min(worst, g.value / e.value)
    elapsed = time.perf_counter() - t0
    ok = worst >= 0.5 and violations == 0 and elapsed < 60
    acceptance(1, ok, f"600 instances, worst ratio {worst:.3f}, mean {np.mean(ratios):.3f}, "
                      f"violations {violations}, {elapsed:.1f}s")
    assert ok


def test_c02_greedy_trace(acceptance):
    inst = JamInstance([10, 5], [1, 2], [8, 4, 3])
    g = greedy_solve(inst)
    e = exact_solve(inst)
    ok = g.trace == [(1, 1, 8.0), (2, 2, 4.0), (2, 3, 1.0)] and g.value == 13.0 and e.value == 13.0
    acceptance(2, ok, f"trace {g.trace}, greedy {g.value}, exact {e.value}")
    assert ok


def test_c03_table1(acceptance):
    reps = 5
    gaps = {}
    for i, n in enumerate(TABLE1):
        params = dict(BASE_PARAMS, policy="p2p", n=n, rho=0.8)
        p, _ = mean_blocking(params, reps, i)
        gaps[n] = abs(p - 0.0)  # P_opt = (1 - 1/0.8)^+ = 0
    ns = np.array(list(gaps))
    slope = np.polyfit(np.log(ns), np.log([gaps[n] for n in ns]), 1)[0]
    within = all(abs(gaps[n] - TABLE1[n]) <= 0.02 for n in TABLE1)
    ok = within and -0.65 <= slope <= -0.35
    detail = ", ".join(f"n={n}: {gaps[n]:.4f} ({TABLE1[n]})" for n in TABLE1)
    acceptance(3, ok, f"{detail}; slope {slope:.3f}")
    assert ok


def test_c04_overload(acceptance):
    reps = 6
    target = 1 - 1 / 1.2
    out = {}
    for i, policy in enumerate(("greedy", "p2p")):
        params = dict(BASE_PARAMS, policy=policy, n=1000, rho=1.2)
        out[policy], _ = mean_blocking(params, reps, 100 + i)
    ok = all(abs(v - target) <= 0.03 for v in out.values())
    acceptance(4, ok, f"target {target:.4f}; greedy {out['greedy']:.4f}, p2p {out['p2p']:.4f} ({reps} seeds each)")
    assert ok


def test_c05_insensitivity(acceptance):
    reps = 4
    at400 = {}
    for i, dist in enumerate(TABLE2_400):
        at400[dist], _ = mean_blocking(dict(BASE_PARAMS, policy="greedy", n=400, rho=0.8, dist=dist), reps, 200 + i)
    at1000 = {}
    for i, dist in enumerate(TABLE2_400):
        at1000[dist], _ = mean_blocking(dict(BASE_PARAMS, policy="greedy", n=1000, rho=0.4, dist=dist), reps, 300 + i)
    ok400 = all(abs(at400[d] - TABLE2_400[d]) <= 0.02 for d in at400) and np.ptp(list(at400.values())) <= 0.02
    ok1000 = all(abs(v - TABLE2_1000) <= 0.02 for v in at1000.values()) and np.ptp(list(at1000.values())) <= 0.02
    ok = ok400 and ok1000
    acceptance(5, ok, "(400,0.8) " + " ".join(f"{d}={v:.4f}" for d, v in at400.items())
               + " | (1000,0.4) " + " ".join(f"{d}={v:.4f}" for d, v in at1000.items()))
    assert ok


def test_c06_erlang_b(acceptance):
    out = {}
    for u, target in ((1, 0.5), (2, 0.2)):
        spec = SystemSpec(1, (ServerClass(u, 1, count=1),), Catalog(np.array([1.0])))
        res = simulate(spec, Allocation((frozenset({1}),)), num_arrivals=160_000, seed=u)
        out[u] = (res.blocking_probability, target)
    ok = all(abs(p - t) <= 0.01 for p, t in out.values())
    acceptance(6, ok, " ".join(f"U={u}: {p:.4f} (Erlang-B {t})" for u, (p, t) in out.items()))
    assert ok


def _closed_form_gap(rates, caps, y0, dt, horizon=10.0):
    model = FluidModel(rates, {(1, 1, (c + 1,)): cap for c, cap in enumerate(caps)})
    X0 = model.empty_state()
    X0[:, 1] = y0 / caps
    traj = model.integrate(X0, horizon, dt, keep_content=True)
    exact = np.column_stack([per_content_y(r, c, y, traj.times) for r, c, y in zip(rates, caps, y0)])
    return np.max(np.abs(traj.per_content - exact), axis=0)


def test_c07_fluid_closed_form(acceptance):
    rng = np.random.default_rng(7)
    k = 24
    rates = rng.uniform(0.2, 2.0, k)
    caps = rates * rng.uniform(0.2, 1.5, k)  # both capped and uncapped regimes
    y0 = caps * rng.uniform(0.0, 0.95, k)
    coarse = _closed_form_gap(rates, caps, y0, 1e-3)
    fine = _closed_form_gap(rates, caps, y0, 5e-4)
    ratio = coarse.max() / fine.max()
    ok = coarse.max() <= 1e-3 and 1.7 <= ratio <= 2.3
    acceptance(7, ok, f"{k} triples, sup gap {coarse.max():.2e} at dt=1e-3, {fine.max():.2e} at dt=5e-4, "
                      f"ratio {ratio:.2f}")
    assert ok


def test_c08_fluid_vs_sim(acceptance):
    n, rho, reps, horizon, step = 1000, 1.2, 8, 10.0, 0.01
    params = dict(BASE_PARAMS, policy="greedy", n=n, rho=rho, d=1)
    spec = make_spec(params)
    alloc = allocate("greedy", spec)
    grid = np.arange(0.0, horizon + 1e-9, step)
    caps = stationary(spec, "greedy").per_content
    fluid = sum(per_content_y(lam, cap, 0.0, grid) for lam, cap in zip(spec.per_server_rates, caps))
    paths = []
    for r in range(reps):
        res = simulate(spec, alloc, num_arrivals=int(1.05 * horizon * rho * n), seed=derive_seed(BASE_SEED, 800, r),
                       sample_interval=step)
        paths.append(res.trajectory_y[: grid.size])
    paths = np.array(paths)
    mean_gap = np.max(np.abs(paths.mean(axis=0) - fluid))
    single = np.max(np.abs(paths - fluid), axis=1)
    ok = mean_gap <= 0.05
    acceptance(8, ok, f"sup gap of {reps}-run mean path {mean_gap:.4f}; single paths "
                      f"{single.min():.3f}..{single.max():.3f}")
    assert ok


def test_c09_lemma(acceptance):
    th = greedy_theta([0.5, 0.3, 0.2], 2.0)
    exact_ok = np.max(np.abs(th.theta - [1 / 3, 2 / 15, 1 / 30])) <= 1e-12 and th.theta.sum() == 0.5
    rng = np.random.default_rng(9)
    worst_sum, interval_ok = 0.0, True
    for _ in range(2000):
        m = int(rng.integers(1, 60))
        lam = np.sort(rng.uniform(0.01, 1.0, m))[::-1]
        if m > 1 and np.min(-np.diff(lam)) < 1e-9:
            continue
        rho = float(rng.uniform(0.2, 10))
        t = greedy_theta(lam, rho)
        total = lam.sum()
        worst_sum = max(worst_sum, abs(t.theta.sum() - min(total, total / rho)) / total)
        if rho > 1:
            c = t.cstar
            prefix = np.cumsum(lam)
            nxt = np.append(lam[1:], 0.0)
            lo = prefix[c - 2] - (c - 1) * lam[c - 1] if c > 1 else 0.0
            hi = prefix[c - 1] - c * nxt[c - 1]
            tol = 1e-12 * total
            interval_ok &= lo - tol < total / rho <= hi + tol
    ok = exact_ok and worst_sum <= 1e-12 and interval_ok
    acceptance(9, ok, f"theta {np.round(th.theta, 6).tolist()}, sum {th.theta.sum()}; random max rel sum error "
                      f"{worst_sum:.1e}, c* intervals {'ok' if interval_ok else 'violated'}")
    assert ok


def test_c10_three_partition(acceptance):
    yes = exact_solve(three_partition_instance([1, 2, 3, 1, 2, 3], 6), limit_m=6).value
    no = exact_solve(three_partition_instance([1, 1, 1, 3, 3, 3], 6), limit_m=6).value
    listed = exact_solve(three_partition_instance([1, 1, 4, 1, 2, 3], 6), limit_m=6).value
    ok = abs(yes - 12) < 1e-9 and no < 12 - 1e-9
    acceptance(10, ok, f"YES (1,2,3,1,2,3): {yes}; NO (1,1,1,3,3,3): {no}; "
                       f"(1,1,4,1,2,3) splits as {{1,1,4}},{{1,2,3}}: {listed}")
    assert ok


def _pair_counts(alloc):
    keys = [(1, 2), (1, 3), (2, 3)]
    counts = {k: 0 for k in keys}
    for s in alloc.stored:
        counts[tuple(sorted(s))] += 1
    return np.array([counts[k] for k in keys])


def test_c11_samplers(acceptance):
    n = 100_000
    spec = SystemSpec(n, (ServerClass(1, 2, count=n),), Catalog(np.array([0.5, 0.3, 0.2])))
    obs = _pair_counts(sample_p2p(spec, seed=11))
    p_p2p = chisquare(obs, np.array([15, 10, 6]) / 31 * n).pvalue
    obs_u = _pair_counts(sample_unif(spec, seed=12))
    p_unif = chisquare(obs_u).pvalue
    ok = p_p2p > 0.01 and p_unif > 0.01
    acceptance(11, ok, f"p2p counts {obs.tolist()} p={p_p2p:.3f}; unif counts {obs_u.tolist()} p={p_unif:.3f}")
    assert ok


def test_c12_drift_bound(acceptance):
    rng = np.random.default_rng(12)
    models = [
        FluidModel.from_spec(SystemSpec(10, (ServerClass(2, 2, fraction=0.5), ServerClass(3, 1, fraction=0.5)),
                                        Catalog(np.array([9.0, 6.0, 4.0, 2.0, 1.0]))), "p2p"),
        FluidModel.from_spec(SystemSpec(10, (ServerClass(1, 1, fraction=1.0),),
                                        Catalog(np.array([9.0, 5.0, 3.0, 1.0]) * 1.5 * 10 / 18)), "greedy"),
    ]
    checked, worst, in_w = 0, 0.0, True
    for model in models:
        D = model.drift_bound()
        for _ in range(5000):
            X = model.empty_state()
            for l, u in enumerate(model.bandwidths):
                tails = -np.sort(-rng.random(u))
                if rng.random() < 0.3:
                    tails[:] = 1.0
                X[l, 1 : u + 1] = tails
            worst = max(worst, np.linalg.norm(model.drift(X)) / D)
            checked += 1
        traj = model.integrate(model.empty_state(), 5.0, 1e-2, keep_states=True)
        in_w &= all(model.in_W(X) for X in traj.states)
    ok = worst <= 1.0 and in_w and checked >= 10_000
    acceptance(12, ok, f"{checked} states, max |h|/D = {worst:.3f}; integrated states in W: {in_w}")
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
