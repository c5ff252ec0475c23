"""Federated training over the noisy over-the-air uplink.

Desk-scale strongly convex tasks (ridge and regularised logistic
regression) stand in for a neural network so that the optimum and the
curvature constants are known exactly.
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy import optimize

from .aggregation import (
    gradient_stats,
    normalize_symbols,
    optimal_policy,
    simulate_uplink,
)
from .channel import InvalidInputError, draw_small_scale, random_phases
from .gibbs import GibbsConfig, gibbs_optimize, project_phases
from .objective import ConvexityConstants, d_value
from .sca import ScaConfig, sca_optimize

# training is declared divergent once the optimality gap exceeds this
DIVERGENCE_GAP = 1e100

TRACE_COLUMNS = ("round", "loss", "gap", "grad_norm2", "e1_sq", "e2_sq", "selected", "d_value")


# ---------------------------------------------------------------- tasks

@dataclass
class FlTask:
    """Per-device datasets with a known optimum.

    ``features[m]`` is (K_m, D) and ``labels[m]`` is (K_m,). For ``ridge`` the
    per-sample loss is 0.5 (x^T w - y)^2 + 0.5 reg ||w||^2; for
    ``logistic`` it is log(1 + exp(-y x^T w)) + 0.5 reg ||w||^2 with y in
    {-1, +1}.
    """

    kind: str
    features: List[np.ndarray]
    labels: List[np.ndarray]
    reg: float
    mu: float = field(init=False)
    omega: float = field(init=False)
    w_star: np.ndarray = field(init=False)
    f_star: float = field(init=False)

    def __post_init__(self):
        if self.kind not in ("ridge", "logistic"):
            raise InvalidInputError(f"unknown task kind {self.kind!r}")
        if self.reg <= 0:
            raise InvalidInputError("regulariser must be positive")
        if not self.features or len(self.features) != len(self.labels):
            raise InvalidInputError("need one label vector per device")
        if any(x.shape[0] == 0 for x in self.features):
            raise InvalidInputError("every device needs at least one sample")
        self._x = np.vstack(self.features)
        self._y = np.concatenate(self.labels)
        K = self._x.shape[0]
        gram = self._x.T @ self._x / K
        eig = np.linalg.eigvalsh(gram)
        if self.kind == "ridge":
            mu, omega = eig[0] + self.reg, eig[-1] + self.reg
            self.w_star = np.linalg.solve(gram + self.reg * np.eye(self.dim), self._x.T @ self._y / K)
        else:
            # sigma'' <= 1/4 bounds the curvature from above
            mu, omega = self.reg, 0.25 * eig[-1] + self.reg
            self.w_star = self._solve_logistic()
        self.mu, self.omega = float(mu), float(omega)
        self.f_star = self.loss(self.w_star)

    @property
    def learning_rate(self):
        return 1.0 / self.omega

    def constants(self, alpha1, alpha2):
        return ConvexityConstants(self.mu, self.omega, float(alpha1), float(alpha2))

    @property
    def dim(self):
        return self.features[0].shape[1]

    @property
    def num_devices(self):
        return len(self.features)

    @property
    def sample_counts(self):
        return np.array([x.shape[0] for x in self.features], dtype=np.int64)

    @property
    def total_samples(self):
        return self._x.shape[0]

    def _margins(self, x, y, w):
        return y * (x @ w)

    def _sample_losses(self, x, y, w):
        if self.kind == "ridge":
            return 0.5 * (x @ w - y) ** 2
        return np.logaddexp(0.0, -self._margins(x, y, w))

    def _residual_weights(self, x, y, w):
        """Per-sample scalar s_k with grad of the data term equal to s_k x_k."""
        if self.kind == "ridge":
            return x @ w - y
        return -y * _sigmoid(-self._margins(x, y, w))

    def loss(self, w):
        """Global empirical loss F(w)."""
        w = np.asarray(w, dtype=float)
        return float(np.mean(self._sample_losses(self._x, self._y, w)) + 0.5 * self.reg * w @ w)

    def gradient(self, w):
        """Gradient of F."""
        w = np.asarray(w, dtype=float)
        s = self._residual_weights(self._x, self._y, w)
        return self._x.T @ s / self.total_samples + self.reg * w

    def local_gradient(self, w, m):
        """Average per-sample gradient over device ``m``'s data."""
        if not 0 <= m < self.num_devices:
            raise IndexError(f"device {m} out of range")
        w = np.asarray(w, dtype=float)
        x, y = self.features[m], self.labels[m]
        s = self._residual_weights(x, y, w)
        return x.T @ s / x.shape[0] + self.reg * w

    def sample_grad_norms2(self, w):
        """||grad f(w; x_k, y_k)||^2 for every sample, in device order."""
        w = np.asarray(w, dtype=float)
        s = self._residual_weights(self._x, self._y, w)
        g = s[:, np.newaxis] * self._x + self.reg * w[np.newaxis, :]
        return np.einsum("kd,kd->k", g, g)

    def _solve_logistic(self):
        K = self.total_samples

        def fun(w):
            return self.loss(w)

        def hess(w):
            p = _sigmoid(self._margins(self._x, self._y, w))
            return (self._x.T * (p * (1 - p))) @ self._x / K + self.reg * np.eye(self.dim)

        res = optimize.minimize(fun, np.zeros(self.dim), jac=self.gradient, hess=hess,
                                method="trust-exact", options={"gtol": 1e-12})
        w = res.x
        # a few plain Newton steps push the residual to machine precision
        for _ in range(3):
            w = w - np.linalg.solve(hess(w), self.gradient(w))
        return w


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def split_counts(total, weights):
    """Integer counts proportional to ``weights`` that sum exactly to ``total``."""
    weights = np.asarray(weights, dtype=float)
    if total < weights.size or np.any(weights <= 0):
        raise InvalidInputError("need positive weights and at least one sample per device")
    raw = weights / weights.sum() * total
    counts = np.maximum(np.floor(raw).astype(np.int64), 1)
    # hand out the remainder by largest fractional part
    short = total - counts.sum()
    order = np.argsort(-(raw - np.floor(raw)), kind="stable")
    i = 0
    while short != 0:
        j = order[i % counts.size]
        if short > 0:
            counts[j] += 1
            short -= 1
        elif counts[j] > 1:
            counts[j] -= 1
            short += 1
        i += 1
    return counts


def make_task(kind, dim, per_device_counts, rng, reg=0.1, noise_std=0.1, feature_decay=0.25):
    """Synthetic i.i.d. task with a random ground-truth model.

    Feature ``i`` is Gaussian with standard deviation decaying geometrically
    from 1 to ``feature_decay``, which sets the conditioning.
    """
    counts = np.asarray(per_device_counts, dtype=np.int64)
    if dim < 1 or counts.size == 0 or np.any(counts < 1):
        raise InvalidInputError("need dim >= 1 and positive sample counts")
    w_true = rng.standard_normal(dim) / math.sqrt(dim)
    spread = np.geomspace(1.0, feature_decay, dim) if dim > 1 else np.ones(1)
    feats, labels = [], []
    for k in counts:
        x = rng.standard_normal((int(k), dim)) * spread
        if kind == "ridge":
            y = x @ w_true + noise_std * rng.standard_normal(int(k))
        elif kind == "logistic":
            p = _sigmoid(4.0 * x @ w_true)
            y = np.where(rng.random(int(k)) < p, 1.0, -1.0)
        else:
            raise InvalidInputError(f"unknown task kind {kind!r}")
        feats.append(x)
        labels.append(y)
    return FlTask(kind, feats, labels, reg)


def local_minibatch_update(w, m, batch_size, lam, task, rng):
    """Sequential SGD over a random partition into ceil(K_m / B) batches.

    Returns the effective gradient (w - w_last) / lam.
    """
    if batch_size < 1:
        raise InvalidInputError("batch size must be at least 1")
    w = np.asarray(w, dtype=float)
    x, y = task.features[m], task.labels[m]
    order = rng.permutation(x.shape[0])
    cur = w.copy()
    for start in range(0, order.size, int(batch_size)):
        idx = order[start:start + int(batch_size)]
        s = task._residual_weights(x[idx], y[idx], cur)
        cur = cur - lam * (x[idx].T @ s / idx.size + task.reg * cur)
    return (w - cur) / lam


def batch_sizes(count, batch_size):
    nb = -(-int(count) // int(batch_size))
    return [int(batch_size)] * (nb - 1) + [int(count) - int(batch_size) * (nb - 1)]


def global_update(w, r_hat, active_sum, lam):
    """w - lam / sum_{m in M} K_m * r_hat."""
    if active_sum <= 0:
        raise InvalidInputError("active sample count must be positive")
    return np.asarray(w, dtype=float) - lam / active_sum * np.asarray(r_hat, dtype=float)


def error_decomposition(grad_F, r, r_hat, active_sum):
    """Selection error e1 = grad F - r / S and channel error e2 = (r - r_hat) / S."""
    if active_sum <= 0:
        raise InvalidInputError("active sample count must be positive")
    e1 = np.asarray(grad_F) - np.asarray(r) / active_sum
    e2 = (np.asarray(r) - np.asarray(r_hat)) / active_sum
    return e1, e2


# ------------------------------------------------------- policy sources

@dataclass(frozen=True)
class Design:
    """Selection, receive beamformer and RIS phases for one channel block.

    ``realization`` is the channel the design is used on; baselines that
    ignore the RIS replace it by the direct links only.
    """

    mask: Optional[np.ndarray]
    f: Optional[np.ndarray]
    theta: Optional[np.ndarray]
    realization: object
    error_free: bool = False


@dataclass(frozen=True)
class Optimized:
    """Gibbs selection with SCA beamforming, or a fixed ``(mask, f, theta)``.

    With ``phase_bits`` set, the continuous phases are snapped to the
    discrete grid afterwards and ``f`` is kept.
    """

    gibbs: GibbsConfig = field(default_factory=GibbsConfig)
    fixed: Optional[tuple] = None
    phase_bits: Optional[int] = None
    name: str = "optimized"

    def design(self, realization, counts, params, rng):
        if self.fixed is not None:
            mask, f, theta = (np.asarray(v) for v in self.fixed)
        else:
            res = gibbs_optimize(realization, counts, params, self.gibbs, rng)
            mask, f, theta = res.mask, res.f, res.theta
        if self.phase_bits is not None:
            theta = project_phases(theta, self.phase_bits)
        return Design(mask, f, theta, realization)


@dataclass(frozen=True)
class ErrorFree:
    """Every device, exact aggregation."""

    name: str = "error_free"

    def design(self, realization, counts, params, rng):
        return Design(None, None, None, realization, error_free=True)


@dataclass(frozen=True)
class SelectAllNoRis:
    """Every device, direct links only, SCA receive beamformer."""

    sca: ScaConfig = field(default_factory=ScaConfig)
    name: str = "select_all_no_ris"

    def design(self, realization, counts, params, rng):
        direct = realization.without_ris()
        mask = np.ones(direct.num_devices, dtype=np.int8)
        st = sca_optimize(mask, direct, counts, config=self.sca)
        return Design(mask, st.f, st.theta, direct)


@dataclass(frozen=True)
class RandomPhases:
    """Every device, random fixed RIS phases, SCA receive beamformer."""

    sca: ScaConfig = field(default_factory=ScaConfig)
    name: str = "random_phases"

    def design(self, realization, counts, params, rng):
        theta = random_phases(realization.num_ris_elements, rng)
        folded = realization.fold_ris(theta)
        mask = np.ones(folded.num_devices, dtype=np.int8)
        st = sca_optimize(mask, folded, counts, config=self.sca)
        return Design(mask, st.f, st.theta, folded)


# ----------------------------------------------------- channel schedules

@dataclass(frozen=True)
class Static:
    realization: object

    def block(self, t):
        return 0

    def realization_for(self, block):
        return self.realization


@dataclass(frozen=True)
class BlockFading:
    """Channels redrawn independently every ``period`` rounds.

    Block ``b`` is drawn from ``numpy.random.default_rng([seed, b])`` so the
    sequence does not depend on anything else consumed during training.
    """

    period: int
    model: object
    geometry: object
    params: object
    seed: int

    def __post_init__(self):
        if self.period < 1:
            raise InvalidInputError("period must be at least 1")

    def block(self, t):
        return t // self.period

    def realization_for(self, block):
        rng = np.random.default_rng([self.seed, block])
        return draw_small_scale(self.model, self.geometry, self.params, rng)


# ------------------------------------------------------------- training

@dataclass
class TrainingTrace:
    rounds: np.ndarray
    loss: np.ndarray
    gap: np.ndarray
    grad_norm2: np.ndarray
    e1_sq: np.ndarray
    e2_sq: np.ndarray
    selected: np.ndarray
    d_value: np.ndarray
    final_gap: float
    final_loss: float
    max_sample_grad_norm2: Optional[np.ndarray] = None

    def gaps_with_final(self):
        """Gap at w_0 .. w_T."""
        return np.append(self.gap, self.final_gap)

    def rows(self):
        for i in range(self.rounds.size):
            yield (int(self.rounds[i]), self.loss[i], self.gap[i], self.grad_norm2[i],
                   self.e1_sq[i], self.e2_sq[i], int(self.selected[i]), self.d_value[i])


def _device_gradients(task, w, batch_size, lam, rng):
    if batch_size is None:
        return [task.local_gradient(w, m) for m in range(task.num_devices)]
    return [local_minibatch_update(w, m, batch_size, lam, task, rng) for m in range(task.num_devices)]


def run_training(task, source, T, params, schedule, rng, lam=None, batch_size=None,
                 design_rng=None, record_sample_grads=False, designs=None, beam_noise=True):
    """Train for ``T`` rounds from w_0 = 0.

    ``rng`` drives the channel noise and mini-batch shuffles; ``design_rng``
    (defaults to ``rng``) drives the policy source. ``designs`` may hold a
    precomputed design per channel block, which is reused instead of
    calling the source. ``beam_noise`` is passed to
    :func:`~risfl.aggregation.simulate_uplink`. Row ``t`` of the trace describes w_t and the
    aggregation that produces w_{t+1}. A divergent run fills the remaining
    rows and the final gap with ``inf``.
    """
    if T < 1:
        raise InvalidInputError("T must be at least 1")
    lam = task.learning_rate if lam is None else float(lam)
    if design_rng is None:
        design_rng = rng
    counts = task.sample_counts
    if designs is None:
        designs = {}
    K = float(counts.sum())
    D = task.dim
    w = np.zeros(D)
    cols = {c: np.zeros(T) for c in TRACE_COLUMNS}
    max_sample = np.zeros(T) if record_sample_grads else None
    design = None
    current_block = None
    d_now = 0.0
    for t in range(T):
        block = schedule.block(t)
        if block != current_block:
            current_block = block
            if block not in designs:
                real = schedule.realization_for(block)
                designs[block] = source.design(real, counts, params, design_rng)
            design = designs[block]
            d_now = design_d_value(design, counts, params)
        grad_F = task.gradient(w)
        loss = task.loss(w)
        if not np.isfinite(loss) or loss - task.f_star > DIVERGENCE_GAP:
            for c in ("loss", "gap", "grad_norm2", "e1_sq", "e2_sq"):
                cols[c][t:] = np.inf
            cols["round"][t:] = np.arange(t, T)
            cols["selected"][t:] = cols["selected"][t - 1] if t > 0 else 0
            cols["d_value"][t:] = d_now
            if record_sample_grads:
                max_sample[t:] = np.inf
            w = np.full(D, np.inf)
            break
        if record_sample_grads:
            max_sample[t] = float(np.max(task.sample_grad_norms2(w)))
        grads = _device_gradients(task, w, batch_size, lam, rng)
        if design.error_free:
            r = np.sum(counts[:, np.newaxis] * np.asarray(grads), axis=0)
            r_hat = r
            S = K
            n_sel = task.num_devices
        else:
            active = np.flatnonzero(design.mask)
            g_act = [grads[m] for m in active]
            stats = [gradient_stats(g) for g in g_act]
            policy = optimal_policy(design.mask, design.f, design.theta, design.realization,
                                    counts, stats, params)
            symbols = np.array([normalize_symbols(g, s) for g, s in zip(g_act, stats)])
            agg = simulate_uplink(symbols, policy, design.f, design.theta, design.realization,
                                  stats, counts, params, rng, beam_noise=beam_noise)
            r, r_hat = agg.r, agg.r_hat
            S = float(counts[active].sum())
            n_sel = active.size
        e1, e2 = error_decomposition(grad_F, r, r_hat, S)
        cols["round"][t] = t
        cols["loss"][t] = loss
        cols["gap"][t] = loss - task.f_star
        cols["grad_norm2"][t] = grad_F @ grad_F
        cols["e1_sq"][t] = e1 @ e1
        cols["e2_sq"][t] = e2 @ e2
        cols["selected"][t] = n_sel
        cols["d_value"][t] = d_now
        w = global_update(w, r_hat, S, lam)
    final_loss = task.loss(w) if np.all(np.isfinite(w)) else np.inf
    return TrainingTrace(cols["round"].astype(np.int64), cols["loss"], cols["gap"],
                         cols["grad_norm2"], cols["e1_sq"], cols["e2_sq"],
                         cols["selected"].astype(np.int64), cols["d_value"],
                         float(final_loss - task.f_star), float(final_loss), max_sample)


def design_d_value(design, counts, params):
    """d of a design; 0 for exact aggregation."""
    if design.error_free:
        return 0.0
    return d_value(design.mask, design.f, design.theta, design.realization, counts, params)


def monte_carlo(task, source, T, params, schedule, seeds: Sequence[int], lam=None,
                batch_size=None, design_seed=0, record_sample_grads=False, threads=1):
    """Independent noise trajectories sharing one design per channel block.

    Returns the list of traces in seed order.
    """
    designs = {}
    # fix the designs once so every trajectory sees the same policy
    first_block = schedule.block(0)
    designs[first_block] = source.design(schedule.realization_for(first_block),
                                         task.sample_counts, params,
                                         np.random.default_rng(design_seed))

    def one(seed):
        return run_training(task, source, T, params, schedule, np.random.default_rng(seed),
                            lam=lam, batch_size=batch_size,
                            design_rng=np.random.default_rng([design_seed, 1]),
                            record_sample_grads=record_sample_grads, designs=dict(designs))

    if threads <= 1:
        return [one(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, seeds))
