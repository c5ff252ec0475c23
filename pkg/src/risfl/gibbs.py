"""Device selection by Gibbs sampling over single-flip neighbourhoods.

Each candidate mask is scored by J(x) = min_{f, theta} d(x, f, theta), with
the inner minimisation done by :func:`risfl.sca.sca_optimize`.
"""
import itertools
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import kernels
from .channel import InvalidInputError
from .objective import d_value
from .sca import ScaConfig, sca_optimize


class NoValidCandidateError(RuntimeError):
    """Every candidate in a neighbourhood has an infinite J."""


@dataclass(frozen=True)
class GibbsConfig:
    beta0: float = 1.0
    rho: float = 0.9
    j_max: int = 50
    inner: ScaConfig = field(default_factory=ScaConfig)
    return_last_sample: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.beta0 <= 0 or not 0 < self.rho <= 1:
            raise InvalidInputError("need beta0 > 0 and 0 < rho <= 1")
        if self.j_max < 1:
            raise InvalidInputError("j_max must be at least 1")
        if self.threads < 1:
            raise InvalidInputError("threads must be at least 1")


@dataclass(frozen=True)
class Evaluation:
    """J of one mask together with the design that attains it."""

    mask: np.ndarray
    value: float
    f: Optional[np.ndarray]
    theta: Optional[np.ndarray]


@dataclass
class GibbsResult:
    mask: np.ndarray
    f: np.ndarray
    theta: np.ndarray
    value: float
    betas: np.ndarray          # beta_0 .. beta_jmax; iteration j samples with beta_{j-1}
    log: List[dict]            # one row per iteration
    value_cache: Dict[str, float]


def mask_key(mask):
    return "".join("1" if v else "0" for v in np.asarray(mask))


def neighborhood(x):
    """``x`` followed by the M masks that differ from it in exactly one entry."""
    x = np.asarray(x).astype(np.int8)
    out = [x.copy()]
    for m in range(x.size):
        y = x.copy()
        y[m] = 1 - y[m]
        out.append(y)
    return out


def selection_probabilities(j_values, beta):
    """exp(-J / beta) normalised with a max-shift; infinite J gets probability 0."""
    if beta <= 0:
        raise InvalidInputError("beta must be positive")
    j = np.asarray(j_values, dtype=float)
    finite = np.isfinite(j)
    if not np.any(finite):
        raise NoValidCandidateError("all candidates have infinite J")
    logits = np.full(j.shape, -np.inf)
    logits[finite] = -j[finite] / beta
    w = np.exp(logits - np.max(logits[finite]))
    return w / w.sum()


def sample_selection(j_values, beta, rng):
    """Index drawn from the Boltzmann distribution over the candidates."""
    p = selection_probabilities(j_values, beta)
    return int(rng.choice(p.size, p=p))


def evaluate_mask(mask, realization, sample_counts, params, init=None, config=ScaConfig()):
    """J(mask) and the (f, theta) attaining it; an empty mask scores +inf."""
    mask = np.asarray(mask).astype(np.int8)
    if not mask.any():
        return Evaluation(mask, np.inf, None, None)
    try:
        state = sca_optimize(mask, realization, sample_counts, init=init, config=config)
        value = d_value(mask, state.f, state.theta, realization, sample_counts, params)
    except (ArithmeticError, ValueError):
        return Evaluation(mask, np.inf, None, None)
    return Evaluation(mask, value, state.f, state.theta)


def gibbs_optimize(realization, sample_counts, params, config=GibbsConfig(), rng=None):
    """Anneal over selection masks starting from full selection.

    Candidate ``m`` of every round is warm-started from the solution found
    for candidate ``m`` in the previous round. Returns the best design among
    all evaluated candidates unless ``config.return_last_sample``.
    """
    if rng is None:
        rng = np.random.default_rng()
    M = realization.num_devices
    if M < 1:
        raise InvalidInputError("need at least one device")
    x = np.ones(M, dtype=np.int8)
    warm: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}
    cache: Dict[str, float] = {}
    designs: Dict[str, Evaluation] = {}
    best: Optional[Evaluation] = None
    last: Optional[Evaluation] = None
    betas = np.empty(config.j_max + 1)
    betas[0] = config.beta0
    log = []
    workers = config.threads
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None

    def run(m, cand):
        return evaluate_mask(cand, realization, sample_counts, params,
                             init=warm.get(m), config=config.inner)

    try:
        for j in range(1, config.j_max + 1):
            beta = betas[j - 1]
            cands = neighborhood(x)
            if pool is None:
                evals = [run(m, c) for m, c in enumerate(cands)]
            else:
                evals = list(pool.map(run, range(len(cands)), cands))
            values = np.empty(len(evals))
            for m, ev in enumerate(evals):
                if ev.f is not None:
                    warm[m] = (ev.f, ev.theta)
                key = mask_key(ev.mask)
                if key not in cache or ev.value < cache[key]:
                    cache[key] = ev.value
                    designs[key] = ev
                values[m] = cache[key]
                if best is None or ev.value < best.value:
                    best = designs[key]
            pick = sample_selection(values, beta, rng)
            x = cands[pick]
            last = designs[mask_key(x)]
            log.append({"iteration": j, "beta": beta, "mask": mask_key(x),
                        "value": float(last.value), "incumbent": float(best.value)})
            betas[j] = config.rho * beta
    finally:
        if pool is not None:
            pool.shutdown()

    out = last if config.return_last_sample else best
    return GibbsResult(out.mask.copy(), out.f, out.theta, float(out.value), betas, log, cache)


def default_threads():
    """Worker count from ``RISFL_THREADS`` (defaults to 1)."""
    raw = os.environ.get("RISFL_THREADS", "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError as exc:
        raise InvalidInputError(f"RISFL_THREADS must be an integer, got {raw!r}") from exc
    if n < 1:
        raise InvalidInputError("RISFL_THREADS must be at least 1")
    return n


def exhaustive_search(realization, sample_counts, params, config=ScaConfig()):
    """Score every non-empty mask; returns the best :class:`Evaluation`. Exponential in M."""
    M = realization.num_devices
    best = None
    for bits in itertools.product((0, 1), repeat=M):
        if not any(bits):
            continue
        ev = evaluate_mask(np.array(bits, dtype=np.int8), realization, sample_counts, params,
                           config=config)
        if best is None or ev.value < best.value:
            best = ev
    return best


def project_phases(theta, bits):
    """Snap each phase to the nearest of the 2**bits uniform levels (ties to the lower level)."""
    if bits < 1:
        raise InvalidInputError("bits must be at least 1")
    theta = np.asarray(theta, dtype=np.complex128)
    levels = 2 ** int(bits)
    idx = kernels.nearest_phase_index(np.angle(theta).ravel(), levels)
    return np.exp(2j * np.pi * idx / levels).reshape(theta.shape)
