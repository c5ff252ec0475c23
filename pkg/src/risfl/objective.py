"""The learning-aware design objective d(M, f, theta) and the convergence bounds."""
from dataclasses import dataclass

import numpy as np

from .aggregation import active_indices
from .channel import InvalidInputError


@dataclass(frozen=True)
class ConvexityConstants:
    mu: float
    omega: float
    alpha1: float
    alpha2: float

    def __post_init__(self):
        if not 0 < self.mu <= self.omega:
            raise InvalidInputError("need 0 < mu <= omega")
        if self.alpha1 < 0 or self.alpha2 <= 0:
            raise InvalidInputError("need alpha1 >= 0 and alpha2 > 0")

    @property
    def learning_rate(self):
        return 1.0 / self.omega


def d_terms(mask, f, theta, realization, sample_counts, params):
    """(selection term, noise term) of d. Empty selection gives (…, inf)."""
    counts = np.asarray(sample_counts, dtype=float)
    total = counts.sum()
    active = active_indices(mask)
    selected = counts[active].sum()
    first = 4.0 / total ** 2 * (total - selected) ** 2
    if active.size == 0:
        return first, np.inf
    if params.noise_power == 0:
        return first, 0.0
    heff = realization.effective_matrix(theta)[:, active]
    gains = np.abs(np.conj(f) @ heff) ** 2
    if np.any(gains <= 0):
        return first, np.inf
    worst = np.max(counts[active] ** 2 / gains)
    return first, params.noise_power / (params.max_power * selected ** 2) * worst


def d_value(mask, f, theta, realization, sample_counts, params):
    """(4/K^2)(K - sum K_m)^2 + sigma^2 / (P0 (sum K_m)^2) max_m K_m^2 / |f^H h_m|^2.

    Returns ``inf`` for an empty selection or a zero effective channel.
    """
    first, second = d_terms(mask, f, theta, realization, sample_counts, params)
    return float(first + second)


def psi(d, constants):
    c = constants
    return 1.0 - c.mu / c.omega + 2.0 * c.mu * c.alpha2 * d / c.omega


def loss_bound(t, d, constants, initial_gap):
    """Upper bound on E[F(w_t) - F(w*)] after t rounds.

    Unrolls gap_{t+1} <= Psi gap_t + (alpha1 / omega) d; at Psi == 1 the
    geometric factor becomes t.
    """
    if t < 0:
        raise InvalidInputError("t must be nonnegative")
    p = psi(d, constants)
    drift = constants.alpha1 / constants.omega * d
    if t == 0:
        return float(initial_gap)
    if p == 1.0:
        geom = float(t)
    else:
        geom = (1.0 - p ** t) / (1.0 - p)
    return float(drift * geom + p ** t * initial_gap)


def loss_bound_curve(T, d, constants, initial_gap):
    return np.array([loss_bound(t, d, constants, initial_gap) for t in range(T + 1)])


def asymptotic_gap(d, constants):
    """alpha1 d / (omega - mu + 2 mu alpha2 d), or None when d > 1 / (2 alpha2)."""
    c = constants
    if d > 1.0 / (2.0 * c.alpha2):
        return None
    return c.alpha1 * d / (c.omega - c.mu + 2.0 * c.mu * c.alpha2 * d)


def bound_limit(d, constants):
    """Limit of :func:`loss_bound` as t grows: (alpha1 / omega) d / (1 - Psi).

    None when Psi >= 1. This is larger than :func:`asymptotic_gap` whenever
    mu < omega / 2, so the two are not interchangeable.
    """
    p = psi(d, constants)
    if p >= 1.0:
        return None
    return constants.alpha1 / constants.omega * d / (1.0 - p)


def estimate_a4_constants(sample_grad_norms2, global_grad_norms2, alpha2=2.0):
    """Smallest alpha1 with ||grad f_k(w_t)||^2 <= alpha1 + alpha2 ||grad F(w_t)||^2 on the trace.

    ``sample_grad_norms2`` is (rounds, samples) or a list of per-round
    arrays; ``global_grad_norms2`` has one entry per round.
    """
    if alpha2 <= 0:
        raise InvalidInputError("alpha2 must be positive")
    per_round = [np.max(np.asarray(s, dtype=float)) for s in sample_grad_norms2]
    if not per_round:
        raise InvalidInputError("empty gradient trace")
    excess = np.asarray(per_round) - alpha2 * np.asarray(global_grad_norms2, dtype=float)
    return max(float(np.max(excess)), 0.0), float(alpha2)
