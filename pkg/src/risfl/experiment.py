"""Build scenarios, tasks and optimiser settings from an :class:`ExperimentConfig`.

Random streams are derived from the master seed with fixed tags so each
part of an experiment is reproducible on its own.
"""
from dataclasses import dataclass

import numpy as np

from .channel import (
    ChannelRealization,
    Geometry,
    IidGaussian,
    Rician,
    SystemParams,
    db_to_linear,
    draw_sample_counts,
    place_devices,
)
from .flsim import (
    BlockFading,
    ErrorFree,
    FlTask,
    Optimized,
    RandomPhases,
    SelectAllNoRis,
    Static,
    make_task,
    split_counts,
)
from .gibbs import GibbsConfig
from .sca import DualSolverParams, ScaConfig

# stream tags under the master seed
SCENARIO, TASK, DESIGN, NOISE = 0, 1, 2, 3


def stream(seed, tag, *extra):
    return np.random.default_rng([int(seed), tag, *extra])


def system_params(cfg):
    s = cfg["system"]
    return SystemParams(
        num_antennas=s["num_antennas"],
        num_ris_elements=s["num_ris_elements"],
        num_devices=s["num_devices"],
        max_power=s["max_power"],
        noise_power=s["noise_power"],
        carrier_freq=s["carrier_freq"],
        path_loss_exp=s["path_loss_exp"],
        gain_ps=float(db_to_linear(s["gain_ps_db"])),
        gain_device=float(db_to_linear(s["gain_device_db"])),
        gain_ris=float(db_to_linear(s["gain_ris_db"])),
    )


def fading_model(cfg):
    c = cfg["channel"]
    if c["model"] == "iid":
        return IidGaussian()
    return Rician(chi_rp=float(db_to_linear(c["rician_rp_db"])), chi_dp=c["rician_dp"],
                  chi_dr=c["rician_dr"])


def sca_config(cfg):
    o = cfg["optimizer"]
    return ScaConfig(tau=o["tau"], i_max=o["i_max"], epsilon=o["epsilon"],
                     dual=DualSolverParams(o["dual_step"], o["dual_max_iter"], o["dual_tol"]),
                     return_last_iterate=o["return_last_iterate"])


def gibbs_config(cfg, threads=1):
    o = cfg["optimizer"]
    return GibbsConfig(beta0=o["beta0"], rho=o["rho"], j_max=o["j_max"], inner=sca_config(cfg),
                       return_last_sample=o["return_last_sample"], threads=threads)


@dataclass(frozen=True)
class Scenario:
    params: SystemParams
    geometry: Geometry
    counts: np.ndarray
    realization: ChannelRealization
    schedule: object


def build_scenario(cfg, seed):
    """Device placement, sample counts and the channel schedule for ``seed``."""
    params = system_params(cfg)
    rng = stream(seed, SCENARIO)
    setting = cfg["geometry"]["setting"]
    geometry = place_devices(setting, params, rng)
    spec = cfg["task"]["counts"]
    if isinstance(spec, list):
        counts = np.asarray(spec, dtype=np.int64)
    else:
        counts = draw_sample_counts(setting, params.num_devices, rng)
    total = cfg["task"]["total_samples"]
    if total:
        counts = split_counts(total, counts)
    model = fading_model(cfg)
    period = cfg["channel"]["block_period"]
    channel_seed = int(rng.integers(2 ** 31))
    fading = BlockFading(period or 1, model, geometry, params, channel_seed)
    realization = fading.realization_for(0)
    schedule = fading if period else Static(realization)
    return Scenario(params, geometry, counts, realization, schedule)


def build_task(cfg, counts, seed) -> FlTask:
    t = cfg["task"]
    return make_task(t["kind"], t["dim"], counts, stream(seed, TASK), reg=t["reg"],
                     noise_std=t["noise_std"], feature_decay=t["feature_decay"])


def policy_source(cfg, threads=1):
    name = cfg["run"]["policy"]
    bits = cfg["optimizer"]["phase_bits"] or None
    if name == "optimized":
        return Optimized(gibbs_config(cfg, threads), phase_bits=bits)
    if name == "error_free":
        return ErrorFree()
    if name == "select_all_no_ris":
        return SelectAllNoRis(sca_config(cfg))
    return RandomPhases(sca_config(cfg))

