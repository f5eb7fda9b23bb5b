"""Sparse doubly-selective channel generation with a common delay support."""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from bdcs._random import stream
from bdcs.bem import BemBasis, BemCoefficientMatrix, taps_from_coefficients
from bdcs.errors import DimensionError, InfeasibleError, ParameterError

SPEED_OF_LIGHT = 299_792_458.0

# ITU-R M.1225 Vehicular B: relative delay (ns), average power (dB)
ITU_VEHICULAR_B = (
    (0.0, -2.5),
    (300.0, 0.0),
    (8900.0, -12.8),
    (12900.0, -10.0),
    (17100.0, -25.2),
    (20000.0, -16.0),
)

N_SINUSOIDS = 16


class CommonSupportWarning(UserWarning):
    """The antenna array is too wide for a shared delay support."""


@dataclass(frozen=True)
class SystemConfig:
    n_subcarriers: int = 512
    n_groups: int = 24
    bem_order: int = 3
    channel_length: int = 50
    sparsity: int = 4
    n_antennas: int = 8
    carrier_hz: float = 2.35e9
    bandwidth_hz: float = 20e6
    speed_mps: float = 300 / 3.6
    snr_db: float = 30.0
    max_antenna_spacing_m: float = 0.5

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("n_subcarriers", "n_groups", "bem_order", "channel_length", "n_antennas"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be a positive integer, got {getattr(self, name)}")
        if self.sparsity < 0:
            raise ParameterError(f"sparsity must be non-negative, got {self.sparsity}")
        if self.bem_order % 2 == 0:
            raise ParameterError(f"bem_order must be odd, got {self.bem_order}")
        if self.sparsity > self.channel_length:
            raise ParameterError(f"sparsity {self.sparsity} exceeds channel_length {self.channel_length}")
        if self.channel_length > self.n_subcarriers:
            raise ParameterError(f"channel_length {self.channel_length} exceeds n_subcarriers {self.n_subcarriers}")
        if self.n_groups * self.group_width > self.n_subcarriers:
            raise InfeasibleError(
                f"{self.n_groups} pilot groups of width {self.group_width} do not fit in {self.n_subcarriers} subcarriers"
            )
        if self.carrier_hz <= 0 or self.bandwidth_hz <= 0 or self.max_antenna_spacing_m <= 0:
            raise ParameterError("carrier, bandwidth and antenna spacing must be positive")
        if self.speed_mps < 0:
            raise ParameterError(f"speed must be non-negative, got {self.speed_mps}")

    @property
    def group_width(self) -> int:
        """Subcarriers per pilot group: one pilot plus D-1 guards per side."""
        return 2 * self.bem_order - 1

    @property
    def pilot_overhead(self) -> float:
        return self.n_groups * self.group_width / self.n_subcarriers

    @property
    def doppler_hz(self) -> float:
        return self.speed_mps * self.carrier_hz / SPEED_OF_LIGHT

    @property
    def normalized_doppler(self) -> float:
        """Maximum Doppler shift per OFDM symbol, ``f_d * N / BW``."""
        return self.doppler_hz * self.n_subcarriers / self.bandwidth_hz

    @property
    def common_support_holds(self) -> bool:
        return self.max_antenna_spacing_m / SPEED_OF_LIGHT <= 1.0 / (10.0 * self.bandwidth_hz)

    def with_normalized_doppler(self, nu: float) -> "SystemConfig":
        """Copy with the speed chosen so that ``normalized_doppler == nu``."""
        fd = nu * self.bandwidth_hz / self.n_subcarriers
        return dataclasses.replace(self, speed_mps=fd * SPEED_OF_LIGHT / self.carrier_hz)

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class ChannelRealization:
    taps: np.ndarray  # N_B x N x L
    support: tuple[int, ...]
    tap_powers: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n_antennas(self) -> int:
        return self.taps.shape[0]

    @property
    def n_subcarriers(self) -> int:
        return self.taps.shape[1]

    @property
    def channel_length(self) -> int:
        return self.taps.shape[2]


def itu_vehicular_b(bandwidth_hz: float) -> tuple[np.ndarray, np.ndarray]:
    """ITU Vehicular B delays rounded to the nearest sample, and linear powers."""
    delays_ns, powers_db = np.array(ITU_VEHICULAR_B).T
    samples = np.rint(delays_ns * 1e-9 * bandwidth_hz).astype(int)
    return samples, 10.0 ** (powers_db / 10.0)


def tap_power_profile(sparsity: int) -> np.ndarray:
    """Normalized powers for ``sparsity`` taps, ordered by increasing delay.

    Uses the strongest Vehicular B taps for K <= 6; beyond that the extra taps
    get the weakest Vehicular B power.
    """
    if sparsity == 0:
        return np.zeros(0)
    _, powers = itu_vehicular_b(1.0)
    if sparsity <= len(powers):
        keep = np.sort(np.argsort(powers)[::-1][:sparsity])
        p = powers[keep]
    else:
        p = np.concatenate([powers, np.full(sparsity - len(powers), powers.min())])
    return p / p.sum()


def draw_common_support(channel_length: int, sparsity: int, rng_seed: int) -> tuple[int, ...]:
    """K distinct tap indices drawn uniformly from [0, L-1], sorted."""
    if sparsity > channel_length:
        raise ParameterError(f"sparsity {sparsity} exceeds channel length {channel_length}")
    if sparsity < 0:
        raise ParameterError(f"sparsity must be non-negative, got {sparsity}")
    rng = stream(rng_seed, "support")
    return tuple(int(l) for l in np.sort(rng.choice(channel_length, size=sparsity, replace=False)))


def jakes_process(n_samples: int, doppler_per_sample: float, rng: np.random.Generator) -> np.ndarray:
    """Unit-power sum-of-sinusoids fading process.

    Arrival angles are spread evenly around the circle with a random common
    offset; each path has an independent uniform phase.
    """
    m = np.arange(N_SINUSOIDS)
    alpha = (2 * np.pi * m + rng.uniform(0, 2 * np.pi)) / N_SINUSOIDS
    phi = rng.uniform(0, 2 * np.pi, N_SINUSOIDS)
    n = np.arange(n_samples)[:, None]
    phase = 2 * np.pi * doppler_per_sample * np.cos(alpha)[None, :] * n + phi[None, :]
    return np.exp(1j * phase).sum(axis=1) / np.sqrt(N_SINUSOIDS)


def generate_ds_channel(config: SystemConfig, support, rng_seed: int) -> ChannelRealization:
    """Time-varying sparse taps for every antenna, sharing one delay support."""
    support = tuple(int(l) for l in support)
    L = config.channel_length
    if any(l < 0 or l >= L for l in support):
        raise ParameterError(f"support {support} has indices outside [0, {L - 1}]")
    if len(set(support)) != len(support):
        raise ParameterError(f"support {support} has repeated indices")
    support = tuple(sorted(support))
    if not config.common_support_holds:
        warnings.warn(
            f"antenna spacing {config.max_antenna_spacing_m} m exceeds c/(10*BW); "
            "a common delay support is not guaranteed",
            CommonSupportWarning,
            stacklevel=2,
        )
    powers = tap_power_profile(len(support))
    N, NB = config.n_subcarriers, config.n_antennas
    fd_per_sample = config.doppler_hz / config.bandwidth_hz
    taps = np.zeros((NB, N, L), dtype=complex)
    for nb in range(NB):
        for k, l in enumerate(support):
            rng = stream(rng_seed, "tap", nb, k)
            taps[nb, :, l] = np.sqrt(powers[k]) * jakes_process(N, fd_per_sample, rng)
    return ChannelRealization(taps, support, powers)


def exact_bem_channel(coeffs: BemCoefficientMatrix, basis: BemBasis) -> ChannelRealization:
    """Channel with zero BEM modeling error, ``h[n, l] = sum_d v_d[n] theta[d, l]``."""
    if coeffs.order != basis.order:
        raise DimensionError(f"coefficients have order {coeffs.order}, basis has {basis.order}")
    if coeffs.channel_length > basis.n_subcarriers:
        raise DimensionError("channel length exceeds the number of subcarriers")
    theta = coeffs.as_array()
    taps = np.stack([taps_from_coefficients(theta[nb], basis) for nb in range(coeffs.n_antennas)])
    support = tuple(coeffs.support)
    energy = np.array([np.sum(np.abs(taps[:, :, l]) ** 2) for l in support])
    powers = energy / energy.sum() if energy.sum() > 0 else energy
    return ChannelRealization(taps, support, powers)


def random_block_sparse_coefficients(
    n_antennas: int, channel_length: int, order: int, support, rng: np.random.Generator
) -> BemCoefficientMatrix:
    """i.i.d. CN(0, 1) coefficients on the given taps, zero elsewhere."""
    theta = np.zeros((n_antennas, channel_length, order), dtype=complex)
    idx = list(support)
    shape = (n_antennas, len(idx), order)
    theta[:, idx, :] = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
    return BemCoefficientMatrix.from_array(theta, support)


def write_channel_csv(channel: ChannelRealization, path) -> None:
    """Dump taps as CSV rows in antenna-major, time-major, tap-minor order.

    Two comment lines carry the support and tap powers; floats are written
    with ``repr`` so a read back is bit-exact.
    """
    lines = [
        "# support " + " ".join(str(l) for l in channel.support),
        "# tap_powers " + " ".join(repr(float(p)) for p in channel.tap_powers),
        "antenna,time,tap,real,imag",
    ]
    NB, N, L = channel.taps.shape
    for nb in range(NB):
        for n in range(N):
            for l in range(L):
                v = channel.taps[nb, n, l]
                lines.append(f"{nb},{n},{l},{float(v.real)!r},{float(v.imag)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_channel_csv(path) -> ChannelRealization:
    text = Path(path).read_text().splitlines()
    support = tuple(int(x) for x in text[0].split()[2:])
    powers = np.array([float(x) for x in text[1].split()[2:]])
    rows = [r.split(",") for r in text[3:] if r]
    idx = np.array([[int(r[0]), int(r[1]), int(r[2])] for r in rows])
    vals = np.array([complex(float(r[3]), float(r[4])) for r in rows])
    shape = tuple(idx.max(axis=0) + 1)
    taps = np.zeros(shape, dtype=complex)
    taps[idx[:, 0], idx[:, 1], idx[:, 2]] = vals
    return ChannelRealization(taps, support, powers)
