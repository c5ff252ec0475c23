"""Receive beamformer and RIS phase design for a fixed device selection.

Minimises max_m -|f^H h_m(theta)|^2 / K_m^2 over unit-norm ``f`` and
unit-modulus ``theta`` by successive convex approximation; each convex
subproblem is handled through its Lagrange dual on the weighted simplex.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .aggregation import EmptySelectionError, active_indices
from .channel import InvalidInputError

CHANNEL_SCALE_RATIO = 1e-3


@dataclass(frozen=True)
class DualSolverParams:
    step: float = 0.5
    max_iter: int = 500
    tol: float = 1e-9


@dataclass(frozen=True)
class ScaConfig:
    tau: float = 1.0
    i_max: int = 100
    epsilon: float = 0.01
    dual: DualSolverParams = field(default_factory=DualSolverParams)
    return_last_iterate: bool = False
    # channels are divided by channel_scale() before solving
    normalize_channels: bool = True


@dataclass(frozen=True)
class SurrogateCoeffs:
    a: np.ndarray  # (n, N)
    b: np.ndarray  # (n, L)
    c: np.ndarray  # (n,)
    tau: float


@dataclass(frozen=True)
class DualWeights:
    zeta: np.ndarray
    value: float
    iterations: int
    converged: bool


@dataclass
class ScaState:
    f: np.ndarray
    theta: np.ndarray
    obj: float
    iterations: int = 0
    stopped_early: bool = False
    trace: Optional[np.ndarray] = None
    initial_obj: float = np.nan


def _active_channels(mask, realization, sample_counts):
    active = active_indices(mask)
    if active.size == 0:
        raise EmptySelectionError("no active device")
    hd = np.ascontiguousarray(realization.h_dp[:, active].T)
    g = np.ascontiguousarray(realization.cascades[active])
    k2 = np.asarray(sample_counts, dtype=float)[active] ** 2
    return hd, g, k2


def channel_scale(hd, g):
    """Common factor that maps the weakest device's channel energy to 1e3.

    The min-max problem is invariant to it, but it fixes the size of
    ``tau`` relative to the channel gains.
    """
    energy = np.sum(np.abs(hd) ** 2, axis=1) + np.sum(np.abs(g) ** 2, axis=(1, 2))
    positive = energy[energy > 0]
    if positive.size == 0:
        return 1.0
    return float(np.sqrt(np.min(positive) * CHANNEL_SCALE_RATIO))


def minmax_objective(mask, f, theta, realization, sample_counts):
    hd, g, k2 = _active_channels(mask, realization, sample_counts)
    return float(kernels.minmax_objective(hd, g, k2, np.asarray(f, np.complex128),
                                          np.asarray(theta, np.complex128)))


def surrogate_coeffs(f, theta, mask, realization, tau):
    """a_m = (tau + h_m h_m^H) f, b_m = tau theta + G_m^H f f^H h_m, c_m as in the reformulation."""
    hd, g, _ = _active_channels(mask, realization, np.ones(realization.num_devices))
    a, b, c = kernels.surrogate(hd, g, np.asarray(f, np.complex128), np.asarray(theta, np.complex128), float(tau))
    return SurrogateCoeffs(a, b, c, float(tau))


def solve_dual(coeffs, k2, params=DualSolverParams(), xi0=None):
    """Minimise 2||sum zeta a||_2 + 2||sum zeta b||_1 - sum zeta c on {zeta >= 0, sum K^2 zeta = 1}."""
    k2 = np.asarray(k2, dtype=float)
    n = k2.size
    if n == 0:
        raise EmptySelectionError("no active device")
    xi0 = np.full(n, 1.0 / n) if xi0 is None else np.asarray(xi0, dtype=float)
    xi, val, iters, conv = kernels.solve_dual(coeffs.a, coeffs.b, coeffs.c, k2, xi0,
                                              float(params.step), int(params.max_iter), float(params.tol))
    return DualWeights(xi / k2, float(val), int(iters), bool(conv))


def dual_objective(zeta, coeffs):
    return float(kernels.dual_value(np.asarray(zeta, dtype=float), coeffs.a, coeffs.b, coeffs.c))


def primal_update(zeta, coeffs, f_prev):
    """f = sum zeta a / ||.||_2 and theta_l = exp(j arg (sum zeta b)_l)."""
    return kernels.primal_update(np.asarray(zeta, dtype=float), coeffs.a, coeffs.b,
                                 np.asarray(f_prev, np.complex128))


def default_init(mask, realization, sample_counts):
    """theta = all ones; f matched to the device with the largest K_m^2 / ||h_m||^2."""
    hd, g, k2 = _active_channels(mask, realization, sample_counts)
    theta = np.ones(realization.num_ris_elements, dtype=np.complex128)
    h = kernels.effective_channels(hd, g, theta)
    energy = np.sum(np.abs(h) ** 2, axis=1)
    with np.errstate(divide="ignore"):
        weak = np.where(energy > 0, k2 / energy, np.inf)
    pick = int(np.argmax(weak))
    if energy[pick] > 0:
        f = h[pick] / np.sqrt(energy[pick])
    else:
        f = np.zeros(realization.num_antennas, dtype=np.complex128)
        f[0] = 1.0
    return f, theta


def sca_optimize(mask, realization, sample_counts, init=None, config=ScaConfig()):
    """Run the SCA loop. ``init`` is an optional ``(f, theta)`` warm start.

    Returns the best iterate seen (or the last one when
    ``config.return_last_iterate``); ``obj`` is in the original channel units.
    """
    hd, g, k2 = _active_channels(mask, realization, sample_counts)
    if init is None:
        f0, theta0 = default_init(mask, realization, sample_counts)
    else:
        f0, theta0 = (np.asarray(x, dtype=np.complex128) for x in init)
        if f0.shape != (realization.num_antennas,) or theta0.shape != (realization.num_ris_elements,):
            raise InvalidInputError("warm start has the wrong shape")
    scale = channel_scale(hd, g) if config.normalize_channels else 1.0
    hd_s = hd / scale
    g_s = g / scale
    f, theta, obj, iters, stopped, trace = kernels.sca_loop(
        hd_s, g_s, k2, np.ascontiguousarray(f0), np.ascontiguousarray(theta0),
        float(config.tau), int(config.i_max), float(config.epsilon),
        float(config.dual.step), int(config.dual.max_iter), float(config.dual.tol),
        bool(config.return_last_iterate))
    s2 = scale ** 2
    return ScaState(f=f, theta=theta, obj=float(obj) * s2, iterations=int(iters),
                    stopped_early=bool(stopped), trace=trace[: iters + 1] * s2,
                    initial_obj=float(trace[0]) * s2)
