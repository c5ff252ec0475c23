"""Oracle checks run by ``risfl validate``; each returns a JSON-ready report."""
import numpy as np

from . import gibbs, objective, sca
from .aggregation import aggregation_mse, gradient_stats, optimal_policy, simulate_uplink
from .channel import ChannelRealization, SystemParams, cn, random_phases
from .flsim import Optimized, Static, make_task, monte_carlo, split_counts


def _random_instance(rng, M, N, L):
    real = ChannelRealization(cn((N, M), rng), cn((N, L), rng), cn((L, M), rng))
    f = cn(N, rng)
    f /= np.linalg.norm(f)
    return real, f, random_phases(L, rng)


def _mc_mse(real, f, theta, counts, stats, params, draws, rng):
    """Monte-Carlo E||e2||^2 for one scalar symbol per draw."""
    mask = np.ones(real.num_devices, dtype=np.int8)
    policy = optimal_policy(mask, f, theta, real, counts, stats, params)
    symbols = rng.standard_normal((real.num_devices, draws))
    agg = simulate_uplink(symbols, policy, f, theta, real, stats, counts, params, rng)
    return agg.e2_sample / draws


def lemma2(seed, instances=5, draws=100_000, grid=2000):
    """Closed-form policy versus a grid over eta, and analytic versus Monte-Carlo MSE."""
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(instances):
        M, N, L = int(rng.integers(2, 9)), int(rng.integers(1, 5)), int(rng.integers(0, 17))
        real, f, theta = _random_instance(rng, M, N, L)
        params = SystemParams(num_antennas=N, num_ris_elements=L, num_devices=M,
                              max_power=float(rng.uniform(0.5, 2.0)), noise_power=float(rng.uniform(0.1, 1.0)))
        counts = rng.integers(1, 50, M)
        stats = [gradient_stats(rng.standard_normal(8) * rng.uniform(0.5, 2.0)) for _ in range(M)]
        mask = np.ones(M, dtype=np.int8)
        closed = aggregation_mse(mask, f, theta, real, counts, stats, params, dim=1)
        fh = np.conj(f) @ real.effective_matrix(theta)
        nu2 = np.array([s.nu2 for s in stats])
        eta_max = np.min(params.max_power * np.abs(fh) ** 2 / (counts ** 2 * nu2))
        best = np.inf
        for eta in np.linspace(eta_max / grid, eta_max * 1.5, grid):
            p2 = counts ** 2 * eta * nu2 / np.abs(fh) ** 2
            if np.all(p2 <= params.max_power * (1 + 1e-12)):
                best = min(best, params.noise_power / (eta * counts.sum() ** 2))
        mc = _mc_mse(real, f, theta, counts, stats, params, draws, rng)
        rows.append({"M": M, "N": N, "L": L, "closed_form": closed, "grid_best": best,
                     "monte_carlo": mc, "mc_relative_error": abs(mc - closed) / closed})
    worst = max(r["mc_relative_error"] for r in rows)
    grid_ok = all(r["grid_best"] >= r["closed_form"] * (1 - 5e-3) for r in rows)
    return {"suite": "lemma2", "seed": seed, "instances": rows,
            "mc_relative_error": worst, "passed": bool(grid_ok and worst <= 0.02)}


def mse(scenario, seed, draws=100_000):
    """Analytic versus Monte-Carlo MSE on the configured channel with SCA beamforming."""
    rng = np.random.default_rng(seed)
    real, counts, params = scenario.realization, scenario.counts, scenario.params
    mask = np.ones(real.num_devices, dtype=np.int8)
    st = sca.sca_optimize(mask, real, counts)
    stats = [gradient_stats(rng.standard_normal(8)) for _ in range(real.num_devices)]
    closed = aggregation_mse(mask, st.f, st.theta, real, counts, stats, params, dim=1)
    mc = _mc_mse(real, st.f, st.theta, counts, stats, params, draws, rng)
    rel = abs(mc - closed) / closed if closed > 0 else abs(mc)
    return {"suite": "mse", "seed": seed, "closed_form": closed, "monte_carlo": mc,
            "mc_relative_error": rel, "passed": bool(rel <= 0.02)}


def gibbs_dist(seed, draws=100_000, candidates=6, beta=0.7, rho=0.9, j_max=20):
    """Empirical candidate frequencies versus the Boltzmann weights, and the beta trace."""
    rng = np.random.default_rng(seed)
    j = rng.uniform(0.0, 2.0, candidates)
    p = gibbs.selection_probabilities(j, beta)
    hits = np.bincount([gibbs.sample_selection(j, beta, rng) for _ in range(draws)], minlength=candidates)
    dev = float(np.max(np.abs(hits / draws - p)))
    betas = np.empty(j_max + 1)
    betas[0] = 1.0
    for k in range(1, j_max + 1):
        betas[k] = rho * betas[k - 1]
    trace_err = float(np.max(np.abs(betas / (rho ** np.arange(j_max + 1)) - 1.0)))
    return {"suite": "gibbs-dist", "seed": seed, "max_abs_deviation": dev,
            "beta_trace_relative_error": trace_err, "passed": bool(dev <= 0.01 and trace_err <= 1e-12)}


def sca_oracle(seed, instances=5, samples=10_000, epsilon=1e-4):
    """SCA objective versus the best of random feasible (f, theta) samples."""
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(instances):
        M, N, L = 4, 3, 8
        real, _, _ = _random_instance(rng, M, N, L)
        counts = rng.integers(1, 10, M)
        st = sca.sca_optimize(np.ones(M), real, counts, config=sca.ScaConfig(epsilon=epsilon))
        F = cn((samples, N), rng)
        F /= np.linalg.norm(F, axis=1, keepdims=True)
        T = np.exp(2j * np.pi * rng.random((samples, L)))
        H = real.h_dp.T[np.newaxis] + np.einsum("mnl,sl->smn", real.cascades, T)
        fh = np.einsum("sn,smn->sm", F.conj(), H)
        best = float(np.min(np.max(-np.abs(fh) ** 2 / counts.astype(float) ** 2, axis=1)))
        rows.append({"sca": st.obj, "random_best": best, "iterations": st.iterations})
    ok = all(r["sca"] <= r["random_best"] + 1e-6 * abs(r["random_best"]) for r in rows)
    return {"suite": "sca-oracle", "seed": seed, "instances": rows, "passed": bool(ok)}


def bound(scenario, seed, rounds=60, trajectories=20, dim=10, total=2000, alpha2=2.0):
    """Monte-Carlo mean gap versus the unrolled bound on a ridge task."""
    counts = split_counts(total, scenario.counts)
    task = make_task("ridge", dim, counts, np.random.default_rng([seed, 1]))
    params = scenario.params
    traces = monte_carlo(task, Optimized(gibbs.GibbsConfig(j_max=10)), rounds, params,
                         Static(scenario.realization), [seed * 1000 + i for i in range(trajectories)],
                         design_seed=seed, record_sample_grads=True)
    gaps = np.array([t.gaps_with_final() for t in traces])
    sample = np.concatenate([t.max_sample_grad_norm2 for t in traces])[:, np.newaxis]
    glob = np.concatenate([t.grad_norm2 for t in traces])
    a1, a2 = objective.estimate_a4_constants(sample, glob, alpha2)
    d = float(traces[0].d_value[0])
    consts = task.constants(a1, a2)
    curve = objective.loss_bound_curve(rounds, d, consts, gaps[0, 0])
    mean = gaps.mean(axis=0)
    slack = curve - mean
    ok = bool(np.all(slack >= -1e-12 * np.maximum(1.0, np.abs(curve))))
    return {"suite": "bound", "seed": seed, "d": d, "alpha1": a1, "alpha2": a2,
            "mu": task.mu, "omega": task.omega, "min_slack": float(np.min(slack)),
            "final_mean_gap": float(mean[-1]), "final_bound": float(curve[-1]), "passed": ok,
            "trace": [(t, float(mean[t]), float(curve[t])) for t in range(rounds + 1)]}


SUITES = ("lemma2", "mse", "gibbs-dist", "sca-oracle", "bound")
