"""Over-the-air gradient aggregation with the MSE-optimal transceiver policy."""
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .channel import InvalidInputError

NU2_FLOOR = 1e-12


class DegenerateChannelError(ArithmeticError):
    """An active device has a zero effective channel gain |f^H h_m|."""


class EmptySelectionError(ValueError):
    pass


@dataclass(frozen=True)
class GradientStats:
    mean: float
    nu2: float

    @property
    def zero_variance(self):
        return self.nu2 < NU2_FLOOR


@dataclass(frozen=True)
class TransceiverPolicy:
    """eta and per-device equalisers ``p`` (aligned with the active devices).

    Devices flagged ``silent`` have (numerically) constant gradients and
    transmit nothing; their mean reaches the PS through the statistics.
    """

    eta: float
    p: np.ndarray
    active: np.ndarray
    silent: np.ndarray
    binding: int  # position in ``active`` of the device attaining the min, -1 if none


@dataclass(frozen=True)
class AggregationResult:
    r_hat: np.ndarray          # real part of the estimate, used for the model update
    r_hat_complex: np.ndarray  # raw estimator output
    r: np.ndarray              # noiseless target sum_m K_m g_m
    e2_sample: float           # ||r - r_hat_complex||^2 / (sum K_m)^2


def active_indices(mask):
    mask = np.asarray(mask)
    if mask.ndim != 1:
        raise InvalidInputError("mask must be a vector")
    return np.flatnonzero(mask)


def gradient_stats(g):
    """Mean and (population) variance of one local gradient."""
    g = np.asarray(g, dtype=float)
    if g.size == 0:
        raise InvalidInputError("empty gradient")
    mean = float(np.mean(g))
    return GradientStats(mean, float(np.mean((g - mean) ** 2)))


def normalize_symbols(g, stats):
    """Zero-mean unit-power symbols (g - mean) / nu; all zeros for a silent device."""
    g = np.asarray(g, dtype=float)
    if stats.zero_variance:
        return np.zeros_like(g)
    return (g - stats.mean) / np.sqrt(stats.nu2)


def _beam_gains(mask, f, theta, realization):
    active = active_indices(mask)
    if active.size == 0:
        raise EmptySelectionError("no active device")
    heff = realization.effective_matrix(theta)[:, active]
    fh = np.conj(f) @ heff
    return active, fh


def optimal_policy(mask, f, theta, realization, sample_counts, stats, params):
    """Closed-form (eta, p_m) minimising the aggregation MSE under |p_m|^2 <= P0.

    ``stats`` is a sequence of :class:`GradientStats` aligned with the
    active devices in ascending index order.
    """
    active, fh = _beam_gains(mask, f, theta, realization)
    if len(stats) != active.size:
        raise InvalidInputError("need one GradientStats per active device")
    counts = np.asarray(sample_counts, dtype=float)[active]
    nu2 = np.array([s.nu2 for s in stats])
    silent = nu2 < NU2_FLOOR
    gains = np.abs(fh) ** 2
    if np.any(gains[~silent] <= 0.0):
        raise DegenerateChannelError("zero effective channel for an active device")
    p = np.zeros(active.size, dtype=np.complex128)
    if np.all(silent):
        return TransceiverPolicy(np.inf, p, active, silent, -1)
    ratio = np.full(active.size, np.inf)
    live = ~silent
    ratio[live] = params.max_power * gains[live] / (counts[live] ** 2 * nu2[live])
    binding = int(np.argmin(ratio))
    eta = float(ratio[binding])
    p[live] = counts[live] * np.sqrt(eta * nu2[live]) * np.conj(fh[live]) / gains[live]
    return TransceiverPolicy(eta, p, active, silent, binding)


def simulate_uplink(symbols, policy, f, theta, realization, stats, sample_counts, params, rng,
                    beam_noise=False):
    """One noisy over-the-air aggregation of D symbols per active device.

    ``symbols`` is (n_active, D). Returns the estimate of
    r = sum_m K_m g_m built from the received superposition plus the
    separately delivered means.

    By default the N-antenna noise is drawn and then combined. With
    ``beam_noise`` the combined noise f^H n, which is CN(0, sigma^2) for a
    unit-norm ``f``, is drawn directly; the estimate has the same
    distribution but the draws no longer depend on ``f``, so runs with
    different designs and the same seed share their noise.
    """
    symbols = np.atleast_2d(np.asarray(symbols, dtype=float))
    active = policy.active
    if symbols.shape[0] != active.size or len(stats) != active.size:
        raise InvalidInputError("symbols/stats do not match the active set")
    counts = np.asarray(sample_counts, dtype=float)[active]
    means = np.array([s.mean for s in stats])
    nu = np.sqrt(np.array([s.nu2 for s in stats]))
    D = symbols.shape[1]
    # local gradients reconstructed from the symbols
    grads = symbols * nu[:, np.newaxis] + means[:, np.newaxis]
    r = counts @ grads
    g_bar = float(counts @ means)

    heff = realization.effective_matrix(theta)[:, active]
    live = ~policy.silent
    tx = np.zeros((active.size, D), dtype=np.complex128)
    tx[live] = policy.p[live, np.newaxis] * symbols[live]
    y = heff @ tx
    N = heff.shape[0]
    noise_std = np.sqrt(params.noise_power / 2.0)
    if params.noise_power > 0 and not beam_noise:
        y = y + noise_std * (rng.standard_normal((N, D)) + 1j * rng.standard_normal((N, D)))
    combined = np.conj(f) @ y
    if params.noise_power > 0 and beam_noise:
        combined = combined + noise_std * np.linalg.norm(f) * (
            rng.standard_normal(D) + 1j * rng.standard_normal(D))
    if np.isinf(policy.eta):
        r_hat_c = np.full(D, g_bar, dtype=np.complex128)
    else:
        r_hat_c = combined / np.sqrt(policy.eta) + g_bar
    total = counts.sum()
    e2 = float(np.sum(np.abs(r - r_hat_c) ** 2) / total ** 2)
    return AggregationResult(r_hat_c.real.copy(), r_hat_c, r, e2)


def aggregation_mse(mask, f, theta, realization, sample_counts, stats, params, dim):
    """Expected ||e_2||^2 under the optimal policy: D sigma^2 / (P0 S^2) max K^2 nu^2 / |f^H h|^2."""
    active, fh = _beam_gains(mask, f, theta, realization)
    if params.noise_power == 0:
        return 0.0
    counts = np.asarray(sample_counts, dtype=float)[active]
    nu2 = np.array([s.nu2 for s in stats])
    live = nu2 >= NU2_FLOOR
    if not np.any(live):
        return 0.0
    gains = np.abs(fh[live]) ** 2
    if np.any(gains <= 0):
        raise DegenerateChannelError("zero effective channel for an active device")
    worst = np.max(counts[live] ** 2 * nu2[live] / gains)
    return float(dim * params.noise_power / (params.max_power * counts.sum() ** 2) * worst)
