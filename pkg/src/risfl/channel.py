"""System geometry, path loss and small-scale fading for the RIS-assisted uplink."""
import json
import struct
from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence, Union

import numpy as np

SPEED_OF_LIGHT = 3e8

PS_POSITION = (-50.0, 0.0, 10.0)
RIS_POSITION = (0.0, 0.0, 10.0)
REGION_I = ((-20.0, 0.0), (-10.0, 10.0))
REGION_II = ((100.0, 120.0), (-10.0, 10.0))

# Array axes for the line-of-sight steering vectors (half-wavelength ULAs).
PS_ARRAY_AXIS = (0.0, 1.0, 0.0)
RIS_ARRAY_AXIS = (1.0, 0.0, 0.0)
LOS_MODEL = (
    "half-wavelength ULA steering vectors; PS axis (0,1,0), RIS axis (1,0,0); "
    "a_n(u) = exp(-j*pi*n*<u, axis>) with u the unit vector from the array to the "
    "far end; H_RP^LoS = a_PS(u_PS->RIS) a_RIS(u_RIS->PS)^H; vector links use a single "
    "steering vector"
)


class InvalidInputError(ValueError):
    pass


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


@dataclass(frozen=True)
class SystemParams:
    """Radio parameters. Powers and gains are linear ratios.

    Defaults are the Table-1 values; ``d_x``/``d_y`` default to one carrier
    wavelength.
    """

    num_antennas: int = 5
    num_ris_elements: int = 40
    num_devices: int = 40
    max_power: float = 0.1
    noise_power: float = 1e-10
    carrier_freq: float = 915e6
    path_loss_exp: float = 3.76
    gain_ps: float = float(db_to_linear(5.0))
    gain_device: float = 1.0
    gain_ris: float = float(db_to_linear(5.0))
    element_size_x: Optional[float] = None
    element_size_y: Optional[float] = None

    def __post_init__(self):
        if min(self.num_antennas, self.num_devices) < 1 or self.num_ris_elements < 0:
            raise InvalidInputError("need N >= 1, M >= 1 and L >= 0")
        if self.max_power <= 0:
            raise InvalidInputError("max_power must be positive")
        if self.noise_power < 0:
            raise InvalidInputError("noise_power must be nonnegative")
        if self.carrier_freq <= 0:
            raise InvalidInputError("carrier_freq must be positive")
        if min(self.gain_ps, self.gain_device, self.gain_ris) <= 0:
            raise InvalidInputError("antenna gains must be positive")
        if self.element_size_x is None:
            object.__setattr__(self, "element_size_x", self.wavelength)
        if self.element_size_y is None:
            object.__setattr__(self, "element_size_y", self.wavelength)

    @property
    def wavelength(self):
        return SPEED_OF_LIGHT / self.carrier_freq

    def replace(self, **changes):
        values = asdict(self)
        # element sizes follow the wavelength unless set explicitly
        if "carrier_freq" in changes:
            values["element_size_x"] = values["element_size_y"] = None
        values.update(changes)
        return SystemParams(**values)


@dataclass(frozen=True)
class Geometry:
    ps_position: np.ndarray
    ris_position: np.ndarray
    device_positions: np.ndarray  # (M, 3)

    @property
    def num_devices(self):
        return self.device_positions.shape[0]

    def d_dp(self):
        return np.linalg.norm(self.device_positions - self.ps_position, axis=1)

    def d_dr(self):
        return np.linalg.norm(self.device_positions - self.ris_position, axis=1)

    def d_rp(self):
        return float(np.linalg.norm(self.ris_position - self.ps_position))


def _uniform_in(region, count, rng):
    (x0, x1), (y0, y1) = region
    pts = np.zeros((count, 3))
    pts[:, 0] = rng.uniform(x0, x1, count)
    pts[:, 1] = rng.uniform(y0, y1, count)
    return pts


def place_devices(setting, params, rng):
    """Drop the devices on the ground plane.

    ``"concentrated"`` puts every device in Region I; ``"two_cluster"``
    puts the first half in Region I and the rest in Region II.
    """
    m = params.num_devices
    setting = setting.lower().replace("-", "_")
    if setting == "concentrated":
        pos = _uniform_in(REGION_I, m, rng)
    elif setting in ("two_cluster", "twocluster"):
        if m < 2:
            raise InvalidInputError("two-cluster placement needs at least 2 devices")
        near = m // 2
        pos = np.vstack([_uniform_in(REGION_I, near, rng), _uniform_in(REGION_II, m - near, rng)])
    else:
        raise InvalidInputError(f"unknown setting {setting!r}")
    return Geometry(np.array(PS_POSITION), np.array(RIS_POSITION), pos)


EQUAL_SAMPLE_COUNT = 750
LARGE_COUNT_RANGE = (1000, 2000)
SMALL_COUNT_RANGE = (100, 200)


def draw_sample_counts(setting, num_devices, rng):
    """Local dataset sizes K_m.

    ``"concentrated"`` gives every device 750 samples. ``"two_cluster"``
    gives a random half of the devices (independent of location) a size
    uniform on [1000, 2000] and the rest a size uniform on [100, 200].
    """
    setting = setting.lower().replace("-", "_")
    if num_devices < 1:
        raise InvalidInputError("need at least one device")
    if setting == "concentrated":
        return np.full(num_devices, EQUAL_SAMPLE_COUNT, dtype=np.int64)
    if setting not in ("two_cluster", "twocluster"):
        raise InvalidInputError(f"unknown setting {setting!r}")
    large = rng.permutation(num_devices) < num_devices // 2
    counts = np.empty(num_devices, dtype=np.int64)
    counts[large] = rng.integers(LARGE_COUNT_RANGE[0], LARGE_COUNT_RANGE[1] + 1, large.sum())
    counts[~large] = rng.integers(SMALL_COUNT_RANGE[0], SMALL_COUNT_RANGE[1] + 1, (~large).sum())
    return counts


def path_loss_direct(d_dp, params):
    """Free-space device-PS gain G_PS G_D (c / (4 pi f_c d))^PL."""
    d = np.asarray(d_dp, dtype=float)
    if np.any(d <= 0):
        raise InvalidInputError("distance must be positive")
    return params.gain_ps * params.gain_device * (
        SPEED_OF_LIGHT / (4 * np.pi * params.carrier_freq * d)) ** params.path_loss_exp


def path_loss_cascaded(d_rp, d_dr, params, num_ris=None):
    """Device-RIS-PS gain G_PS G_D G_RIS L^2 d_x d_y lambda^2 / (64 pi^3 d_RP^2 d_DR^2)."""
    d_rp = np.asarray(d_rp, dtype=float)
    d_dr = np.asarray(d_dr, dtype=float)
    if np.any(d_rp <= 0) or np.any(d_dr <= 0):
        raise InvalidInputError("distance must be positive")
    L = params.num_ris_elements if num_ris is None else num_ris
    return (params.gain_ps * params.gain_device * params.gain_ris * L ** 2
            * params.element_size_x * params.element_size_y * params.wavelength ** 2
            / (64 * np.pi ** 3 * d_rp ** 2 * d_dr ** 2))


@dataclass(frozen=True)
class IidGaussian:
    pass


@dataclass(frozen=True)
class Rician:
    """Linear Rician factors per link; defaults: 3 dB RIS-PS, 0 elsewhere."""

    chi_rp: float = float(db_to_linear(3.0))
    chi_dp: float = 0.0
    chi_dr: float = 0.0

    def __post_init__(self):
        if min(self.chi_rp, self.chi_dp, self.chi_dr) < 0:
            raise InvalidInputError("Rician factors must be nonnegative")


FadingModel = Union[IidGaussian, Rician]


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    """Complex channels of one coherence block.

    ``h_dp`` is (N, M), ``H_rp`` is (N, L), ``h_dr`` is (L, M) and
    ``cascades[m] = H_rp @ diag(h_dr[:, m])``.
    """

    h_dp: np.ndarray
    H_rp: np.ndarray
    h_dr: np.ndarray
    cascades: np.ndarray = field(init=False)

    def __post_init__(self):
        h_dp = np.ascontiguousarray(self.h_dp, dtype=np.complex128)
        H_rp = np.ascontiguousarray(self.H_rp, dtype=np.complex128)
        h_dr = np.ascontiguousarray(self.h_dr, dtype=np.complex128)
        if H_rp.shape[0] != h_dp.shape[0] or H_rp.shape[1] != h_dr.shape[0] or h_dr.shape[1] != h_dp.shape[1]:
            raise InvalidInputError(
                f"inconsistent shapes h_dp{h_dp.shape} H_rp{H_rp.shape} h_dr{h_dr.shape}")
        cascades = H_rp[np.newaxis, :, :] * h_dr.T[:, np.newaxis, :]
        for name, arr in (("h_dp", h_dp), ("H_rp", H_rp), ("h_dr", h_dr), ("cascades", cascades)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def num_antennas(self):
        return self.h_dp.shape[0]

    @property
    def num_devices(self):
        return self.h_dp.shape[1]

    @property
    def num_ris_elements(self):
        return self.H_rp.shape[1]

    def effective_matrix(self, theta):
        """All effective channels as the columns of an (N, M) matrix."""
        theta = np.asarray(theta, dtype=np.complex128)
        return self.h_dp + np.einsum("mnl,l->nm", self.cascades, theta)

    def without_ris(self):
        n, m = self.h_dp.shape
        return ChannelRealization(self.h_dp, np.zeros((n, 0)), np.zeros((0, m)))

    def fold_ris(self, theta):
        """Realization with the RIS fixed at ``theta`` and absorbed into the direct links."""
        n, m = self.h_dp.shape
        return ChannelRealization(self.effective_matrix(theta), np.zeros((n, 0)), np.zeros((0, m)))

    def scaled(self, factor):
        return ChannelRealization(self.h_dp * factor, self.H_rp * factor, self.h_dr)


def cn(shape, rng, var=1.0):
    """CN(0, var): independent real/imag parts with variance var/2 each."""
    return np.sqrt(var / 2.0) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def steering(direction, axis, size):
    """Half-wavelength ULA response towards unit vector ``direction``."""
    cosang = float(np.dot(direction, axis))
    return np.exp(-1j * np.pi * np.arange(size) * cosang)


def _unit(v):
    return v / np.linalg.norm(v)


def los_components(geometry, num_antennas, num_ris):
    """Deterministic unit-modulus LoS parts (H_RP^LoS, h_DP^LoS, h_DR^LoS)."""
    ps, ris = geometry.ps_position, geometry.ris_position
    ps_axis, ris_axis = np.array(PS_ARRAY_AXIS), np.array(RIS_ARRAY_AXIS)
    H_rp = np.outer(steering(_unit(ris - ps), ps_axis, num_antennas),
                    steering(_unit(ps - ris), ris_axis, num_ris).conj())
    devices = geometry.device_positions
    h_dp = np.column_stack([steering(_unit(d - ps), ps_axis, num_antennas) for d in devices])
    h_dr = np.column_stack([steering(_unit(d - ris), ris_axis, num_ris) for d in devices])
    if num_ris == 0:
        h_dr = np.zeros((0, devices.shape[0]), dtype=np.complex128)
    return H_rp, h_dp, h_dr


def _mix(chi, los, nlos):
    if np.isinf(chi):
        return los.astype(np.complex128)
    return np.sqrt(chi / (1 + chi)) * los + np.sqrt(1 / (1 + chi)) * nlos


def draw_small_scale(model, geometry, params, rng, scale_path_loss=True):
    """Draw one channel realization.

    Small-scale coefficients are CN(0, 1) (plus a LoS term under Rician
    fading) and are multiplied by the square root of the path loss. The
    cascaded gain depends on d_RP * d_DR, so its square root is split as
    ``sqrt(C) / d_RP`` on H_RP and ``1 / d_DR,m`` on h_DR,m; the product
    G_m then carries exactly the cascaded path loss.
    """
    n, L, m = params.num_antennas, params.num_ris_elements, geometry.num_devices
    if m != params.num_devices:
        raise InvalidInputError("geometry and params disagree on the number of devices")
    H_rp = cn((n, L), rng)
    h_dp = cn((n, m), rng)
    h_dr = cn((L, m), rng)
    if isinstance(model, Rician):
        los_rp, los_dp, los_dr = los_components(geometry, n, L)
        H_rp = _mix(model.chi_rp, los_rp, H_rp)
        h_dp = _mix(model.chi_dp, los_dp, h_dp)
        h_dr = _mix(model.chi_dr, los_dr, h_dr)
    elif not isinstance(model, IidGaussian):
        raise InvalidInputError(f"unknown fading model {model!r}")
    if scale_path_loss:
        h_dp = h_dp * np.sqrt(path_loss_direct(geometry.d_dp(), params))[np.newaxis, :]
        if L > 0:
            # C / (d_RP^2 d_DR^2) with unit distances
            const = path_loss_cascaded(1.0, 1.0, params)
            H_rp = H_rp * (np.sqrt(const) / geometry.d_rp())
            h_dr = h_dr / geometry.d_dr()[np.newaxis, :]
    return ChannelRealization(h_dp, H_rp, h_dr)


def effective_channel(realization, m, theta):
    """h_m(theta) = h_DP,m + G_m theta."""
    if not 0 <= m < realization.num_devices:
        raise IndexError(f"device index {m} out of range")
    theta = np.asarray(theta, dtype=np.complex128)
    if theta.shape != (realization.num_ris_elements,):
        raise InvalidInputError("theta has the wrong length")
    return realization.h_dp[:, m] + realization.cascades[m] @ theta


def effective_channel_factored(realization, m, theta):
    """Same as :func:`effective_channel` via H_RP diag(theta) h_DR,m."""
    theta = np.asarray(theta, dtype=np.complex128)
    return realization.h_dp[:, m] + realization.H_rp @ (theta * realization.h_dr[:, m])


def random_phases(size, rng):
    return np.exp(2j * np.pi * rng.random(size))


def is_unit_modulus(theta, tol=1e-12):
    return bool(np.all(np.abs(np.abs(theta) - 1.0) <= tol))


def is_unit_norm(f, tol=1e-12):
    return abs(np.linalg.norm(f) - 1.0) <= tol


# --- regression dumps -------------------------------------------------------

_MAGIC = b"RISCH\x01"
_NAMES = ("h_dp", "H_rp", "h_dr")


def _interleave(arr):
    flat = np.ascontiguousarray(arr).reshape(-1)
    out = np.empty(2 * flat.size)
    out[0::2] = flat.real
    out[1::2] = flat.imag
    return out


def _deinterleave(values, shape):
    values = np.asarray(values, dtype=float)
    return (values[0::2] + 1j * values[1::2]).reshape(shape)


def dump_realization(realization, path):
    """Write ``.json`` or binary (any other suffix).

    Binary layout: magic ``RISCH\\x01``, then per matrix (h_dp, H_rp, h_dr)
    two little-endian uint32 dimensions followed by row-major interleaved
    real/imag float64 values.
    """
    path = str(path)
    mats = [getattr(realization, k) for k in _NAMES]
    if path.endswith(".json"):
        doc = {k: {"shape": list(a.shape), "data": _interleave(a).tolist()} for k, a in zip(_NAMES, mats)}
        with open(path, "w") as fh:
            json.dump(doc, fh)
        return
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        for a in mats:
            fh.write(struct.pack("<II", *a.shape))
            fh.write(_interleave(a).astype("<f8").tobytes())


def load_realization(path):
    path = str(path)
    if path.endswith(".json"):
        with open(path) as fh:
            doc = json.load(fh)
        mats = [_deinterleave(doc[k]["data"], tuple(doc[k]["shape"])) for k in _NAMES]
        return ChannelRealization(*mats)
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(_MAGIC):
        raise InvalidInputError(f"{path}: not a channel dump")
    pos = len(_MAGIC)
    mats = []
    for _ in _NAMES:
        rows, cols = struct.unpack_from("<II", blob, pos)
        pos += 8
        count = 2 * rows * cols
        values = np.frombuffer(blob, dtype="<f8", count=count, offset=pos)
        pos += 8 * count
        mats.append(_deinterleave(values, (rows, cols)))
    return ChannelRealization(*mats)
