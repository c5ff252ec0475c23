"""End-to-end acceptance checks, one test per criterion.

Each test prints a ``criterion N: PASS|FAIL (...)`` line; the lines are
repeated in the terminal summary.
"""
import time

import numpy as np
import pytest

from risfl import flsim, gibbs, kernels, objective, sca, validation
from risfl.aggregation import gradient_stats, normalize_symbols, optimal_policy, simulate_uplink
from risfl.channel import (
    IidGaussian,
    SystemParams,
    cn,
    draw_sample_counts,
    draw_small_scale,
    is_unit_modulus,
    is_unit_norm,
    place_devices,
    random_phases,
)

from conftest import random_realization, unit_vector

pytestmark = pytest.mark.acceptance


def two_cluster_channel(rng, M, N, L, noise_power=1e-10):
    params = SystemParams(num_antennas=N, num_ris_elements=L, num_devices=M, noise_power=noise_power)
    geo = place_devices("two_cluster", params, rng)
    real = draw_small_scale(IidGaussian(), geo, params, rng)
    counts = draw_sample_counts("two_cluster", M, rng)
    return params, real, counts


def test_lemma2_optimality(criterion):
    t0 = time.perf_counter()
    report = validation.lemma2(seed=0, instances=20, draws=100_000, grid=2000)
    rows = report["instances"]
    grid_ok = all(r["grid_best"] >= r["closed_form"] * (1 - 5e-3) for r in rows)
    worst = report["mc_relative_error"]
    elapsed = time.perf_counter() - t0
    ok = grid_ok and worst <= 0.02 and elapsed < 30
    criterion(1, ok, f"grid never below closed form: {grid_ok}; worst MC relative error {worst:.4f}; "
                     f"{elapsed:.1f} s")
    assert ok


def test_noiseless_exactness(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(20):
        M, N, L = int(rng.integers(1, 9)), int(rng.integers(1, 5)), int(rng.integers(0, 17))
        real = random_realization(rng, M, N, L)
        params = SystemParams(num_antennas=N, num_ris_elements=L, num_devices=M, max_power=0.1, noise_power=0.0)
        f, theta = unit_vector(rng, N), random_phases(L, rng)
        counts = rng.integers(1, 2000, M)
        grads = rng.standard_normal((M, 50)) * rng.uniform(0.01, 10, (M, 1)) + rng.standard_normal((M, 1))
        stats = [gradient_stats(g) for g in grads]
        symbols = np.array([normalize_symbols(g, s) for g, s in zip(grads, stats)])
        pol = optimal_policy(np.ones(M), f, theta, real, counts, stats, params)
        agg = simulate_uplink(symbols, pol, f, theta, real, stats, counts, params, rng)
        r = counts @ grads
        worst = max(worst, float(np.max(np.abs(agg.r_hat - r)) / np.max(np.abs(r))))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and elapsed < 1
    criterion(2, ok, f"worst relative error {worst:.2e}; {elapsed:.2f} s")
    assert ok


@pytest.fixture(scope="module")
def bound_runs():
    """Ridge task with 2000 samples over 10 two-cluster devices; 100 trajectories of 200 rounds."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    params, real, raw = two_cluster_channel(rng, M=10, N=4, L=16)
    counts = flsim.split_counts(2000, raw)
    task = flsim.make_task("ridge", 20, counts, rng)
    out = {}
    for src in (flsim.Optimized(), flsim.RandomPhases()):
        traces = flsim.monte_carlo(task, src, 200, params, flsim.Static(real), range(100), design_seed=0,
                                   record_sample_grads=True)
        gaps = np.array([t.gaps_with_final() for t in traces])
        sample = np.concatenate([t.max_sample_grad_norm2 for t in traces])[:, np.newaxis]
        glob = np.concatenate([t.grad_norm2 for t in traces])
        a1, a2 = objective.estimate_a4_constants(sample, glob, 2.0)
        out[src.name] = dict(gaps=gaps, d=float(traces[0].d_value[0]), consts=task.constants(a1, a2))
    return out, time.perf_counter() - t0


def test_theorem_bound(criterion, bound_runs):
    runs, elapsed = bound_runs
    parts, ok = [], elapsed < 120
    for name, run in runs.items():
        mean = run["gaps"].mean(axis=0)
        curve = objective.loss_bound_curve(200, run["d"], run["consts"], run["gaps"][0, 0])
        slack = curve - mean
        good = bool(np.all(slack >= -1e-12 * np.abs(curve)))
        ok &= good
        parts.append(f"{name}: d={run['d']:.2e}, alpha1={run['consts'].alpha1:.3g}, min slack {slack.min():.2e}")
    criterion(3, ok, "; ".join(parts) + f"; {elapsed:.0f} s")
    assert ok


def test_corollary_gap(criterion, bound_runs):
    runs, _ = bound_runs
    parts, ok, checked = [], True, 0
    for name, run in runs.items():
        c = run["consts"]
        if run["d"] > 1 / (2 * c.alpha2):
            parts.append(f"{name}: d above 1/(2 alpha2), not applicable")
            continue
        checked += 1
        tail = run["gaps"][:, 180:201].mean(axis=1)
        se = tail.std(ddof=1) / np.sqrt(tail.size)
        gap = objective.asymptotic_gap(run["d"], c)
        good = tail.mean() <= gap + 3 * se
        ok &= good
        parts.append(f"{name}: tail {tail.mean():.2e} vs {gap:.2e} (+3 SE {3 * se:.1e}), "
                     f"limit of bound {objective.bound_limit(run['d'], c):.2e}")
    ok &= checked > 0
    criterion(4, ok, "; ".join(parts))
    assert ok


def grid_dual_minimum(a, b, c, k2, res=1e-3):
    n = round(1 / res)
    i, j = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
    keep = i + j <= n
    xi = np.stack([i[keep], j[keep], n - i[keep] - j[keep]], axis=1) / n
    zeta = xi / k2
    vals = 2 * np.linalg.norm(zeta @ a, axis=1) + 2 * np.abs(zeta @ b).sum(axis=1) - zeta @ c
    return float(vals.min())


def test_sca_quality(criterion):
    t0 = time.perf_counter()
    # random-search oracle on 20 instances
    report = validation.sca_oracle(seed=0, instances=20, samples=10_000, epsilon=1e-4)
    oracle_ok = report["passed"]
    # feasibility of every iterate, identities at every expansion point
    rng = np.random.default_rng(5)
    feasible, identity_err = True, 0.0
    for _ in range(5):
        real = random_realization(rng, 4, 3, 8)
        counts = rng.integers(1, 10, 4)
        mask = np.ones(4)
        full = sca.sca_optimize(mask, real, counts, config=sca.ScaConfig(epsilon=1e-4))
        for i in range(1, full.iterations + 1):
            cfg = sca.ScaConfig(epsilon=0.0, i_max=i, return_last_iterate=True)
            st = sca.sca_optimize(mask, real, counts, config=cfg)
            feasible &= is_unit_norm(st.f) and is_unit_modulus(st.theta)
            coeffs = sca.surrogate_coeffs(st.f, st.theta, mask, real, 1.0)
            fh = np.conj(st.f) @ real.effective_matrix(st.theta)
            tangent = coeffs.c - 2 * (coeffs.a @ np.conj(st.f)).real - 2 * (coeffs.b @ np.conj(st.theta)).real
            identity_err = max(identity_err, float(np.max(np.abs(tangent + np.abs(fh) ** 2) / counts ** 2)))
            w = sca.solve_dual(coeffs, counts.astype(float) ** 2)
            f1, t1 = sca.primal_update(w.zeta, coeffs, st.f)
            za, zb = w.zeta @ coeffs.a, w.zeta @ coeffs.b
            lin = (np.conj(f1) @ za).real + (np.conj(t1) @ zb).real
            identity_err = max(identity_err, abs(lin - np.linalg.norm(za) - np.abs(zb).sum()))
    # dual solver against a 2-simplex grid on 3-device instances
    dual_worst = -np.inf
    for _ in range(5):
        real = random_realization(rng, 3, 3, 8)
        f, theta = unit_vector(rng, 3), random_phases(8, rng)
        k2 = rng.integers(1, 10, 3).astype(float) ** 2
        scale = sca.channel_scale(real.h_dp.T, real.cascades)
        a, b, c = kernels.surrogate(real.h_dp.T / scale, real.cascades / scale, f, theta, 1.0)
        _, val, _, _ = kernels.solve_dual(a, b, c, k2, np.full(3, 1 / 3), 1.0, 500, 1e-9)
        grid = grid_dual_minimum(a, b, c, k2)
        dual_worst = max(dual_worst, (val - grid) / abs(grid))
    elapsed = time.perf_counter() - t0
    ok = oracle_ok and feasible and identity_err <= 1e-9 and dual_worst <= 1e-4 and elapsed < 60
    criterion(5, ok, f"random-search oracle: {oracle_ok}; iterates feasible: {feasible}; "
                     f"identity error {identity_err:.1e}; dual minus grid (relative) {dual_worst:.1e}; "
                     f"{elapsed:.1f} s")
    assert ok


def test_gibbs_distribution(criterion):
    t0 = time.perf_counter()
    report = validation.gibbs_dist(seed=0, draws=100_000)
    rng = np.random.default_rng(2)
    real = random_realization(rng, 3, 2, 2)
    params = SystemParams(num_antennas=2, num_ris_elements=2, num_devices=3, max_power=1.0, noise_power=1.0)
    cfg = gibbs.GibbsConfig(beta0=1.0, rho=0.9, j_max=20, inner=sca.ScaConfig(i_max=10))
    res = gibbs.gibbs_optimize(real, [1, 2, 3], params, cfg, rng)
    trace_err = float(np.max(np.abs(res.betas / (0.9 ** np.arange(21)) - 1)))
    elapsed = time.perf_counter() - t0
    dev = report["max_abs_deviation"]
    ok = dev <= 0.01 and trace_err <= 1e-12 and elapsed < 10
    criterion(6, ok, f"max deviation {dev:.4f}; beta trace relative error {trace_err:.1e}; {elapsed:.1f} s")
    assert ok


def test_exhaustive_agreement(criterion):
    t0 = time.perf_counter()
    hits, ratios = 0, []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        params, real, counts = two_cluster_channel(rng, M=6, N=4, L=16, noise_power=1e-7)
        best = gibbs.exhaustive_search(real, counts, params)
        res = gibbs.gibbs_optimize(real, counts, params, rng=np.random.default_rng(seed))
        ratios.append(res.value / best.value)
        hits += res.value <= best.value * 1.02
    elapsed = time.perf_counter() - t0
    ok = hits >= 18 and elapsed < 180
    criterion(7, ok, f"{hits}/20 seeds within 2%; worst ratio {max(ratios):.3f}; {elapsed:.0f} s")
    assert ok


@pytest.fixture(scope="module")
def ordering_runs():
    """Per seed: final mean gaps of the four policies and the L=32 Gibbs design."""
    t0 = time.perf_counter()
    rows = []
    for seed in range(40):
        rng = np.random.default_rng(seed)
        p32, ch32, counts = two_cluster_channel(rng, M=10, N=4, L=32, noise_power=1e-12)
        ch0, p0 = ch32.without_ris(), p32.replace(num_ris_elements=0)
        task = flsim.make_task("ridge", 20, counts, rng)
        g32 = gibbs.gibbs_optimize(ch32, counts, p32, rng=np.random.default_rng(seed))
        g0 = gibbs.gibbs_optimize(ch0, counts, p0, rng=np.random.default_rng(seed))
        runs = {}
        cases = [("error_free", flsim.ErrorFree(), ch32, p32),
                 ("opt32", flsim.Optimized(fixed=(g32.mask, g32.f, g32.theta)), ch32, p32),
                 ("opt0", flsim.Optimized(fixed=(g0.mask, g0.f, g0.theta)), ch0, p0),
                 ("all_no_ris", flsim.SelectAllNoRis(), ch32, p32)]
        noise_seeds = [1000 + 10 * seed + i for i in range(3)]
        for name, src, ch, p in cases:
            traces = flsim.monte_carlo(task, src, 100, p, flsim.Static(ch), noise_seeds, design_seed=seed)
            runs[name] = (float(np.mean([t.final_gap for t in traces])), float(traces[0].d_value[0]))
        rows.append(dict(seed=seed, runs=runs, g32=g32, channel=ch32, counts=counts, params=p32))
    return rows, time.perf_counter() - t0


def test_end_to_end_ordering(criterion, ordering_runs):
    rows, elapsed = ordering_runs
    ordered = [r["runs"]["error_free"][0] <= r["runs"]["opt32"][0] <= r["runs"]["opt0"][0]
               <= r["runs"]["all_no_ris"][0] for r in rows]
    ris_better = [r["runs"]["opt32"][1] < r["runs"]["opt0"][1] for r in rows]
    failed = [r["seed"] for r, o in zip(rows, ordered) if not o]
    ok = np.mean(ordered) >= 0.95 and all(ris_better) and elapsed < 300
    criterion(8, ok, f"ordering on {sum(ordered)}/40 seeds (failing seeds {failed}); "
                     f"RIS lowers d on {sum(ris_better)}/40; {elapsed:.0f} s")
    assert ok


def test_discrete_phases(criterion, ordering_runs):
    rows, _ = ordering_runs
    close, d1, d3 = [], [], []
    for r in rows:
        g = r["g32"]
        cont = objective.d_value(g.mask, g.f, g.theta, r["channel"], r["counts"], r["params"])
        vals = {b: objective.d_value(g.mask, g.f, gibbs.project_phases(g.theta, b), r["channel"], r["counts"],
                                     r["params"]) for b in (1, 3)}
        close.append(vals[3] <= 1.1 * cont)
        d1.append(vals[1])
        d3.append(vals[3])
    frac = float(np.mean(close))
    ok = frac >= 0.9 and np.mean(d1) > np.mean(d3)
    criterion(9, ok, f"b=3 within 10% on {sum(close)}/40 seeds; mean d b=1 {np.mean(d1):.2e} "
                     f"vs b=3 {np.mean(d3):.2e}")
    assert ok
