"""Channel estimation from received pilots: LS, SOMP, BSOMP and the uplink DCS solver."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from bdcs.bem import BemBasis, BemCoefficientMatrix
from bdcs.errors import DegenerateInputError, DimensionError, ParameterError
from bdcs.pilot import MeasurementSystem, PilotPattern, measurement_matrix

RCOND = 1e-10
RESIDUAL_TOL = 1e-8
NMSE_FLOOR_DB = -300.0

METHODS = ("LS", "SOMP", "BSOMP", "UplinkDCS")


@dataclass
class ObservationSet:
    y_blocks: np.ndarray  # G x D, column d = received pilots at S_d
    noise_variance: float = 0.0


@dataclass
class RecoveryResult:
    coeffs: BemCoefficientMatrix
    support: tuple[int, ...]
    residual_norm: float
    method: str
    residual_history: list = field(default_factory=list)
    exhausted: bool = False


def extract_pilot_observations(
    received: np.ndarray, pattern: PilotPattern, noise_variance: float = 0.0, offset_sign: int = 1
) -> ObservationSet:
    """Gather ``[Y]_{S_d}`` for every BEM order into a ``G x D`` matrix."""
    received = np.asarray(received)
    if received.ndim != 1 or received.shape[0] != pattern.n_subcarriers:
        raise DimensionError(f"received vector has shape {received.shape}, expected ({pattern.n_subcarriers},)")
    rows = pattern.derived_sets(offset_sign)
    return ObservationSet(received[rows].T.copy(), noise_variance)


def _lstsq(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.linalg.lstsq(a, b, rcond=RCOND)[0]


def _taps_of_columns(columns, channel_length: int) -> tuple[int, ...]:
    return tuple(sorted({int(c) % channel_length for c in columns}))


def solve_ls(obs: ObservationSet, meas: MeasurementSystem) -> RecoveryResult:
    """Minimum-norm least squares over every column, ignoring sparsity."""
    Y = obs.y_blocks
    if meas.z.size == 0:
        raise DimensionError("empty measurement matrix")
    lam = np.linalg.pinv(meas.z, rcond=RCOND) @ Y
    residual = float(np.linalg.norm(Y - meas.z @ lam))
    coeffs = BemCoefficientMatrix(meas.n_antennas, meas.channel_length, Y.shape[1], lam, range(meas.channel_length))
    return RecoveryResult(coeffs, tuple(range(meas.channel_length)), residual, "LS", [residual])


def _somp_columns(z: np.ndarray, Y: np.ndarray, n_select: int, tol: float):
    """Greedy column selection shared by SOMP and the uplink estimator."""
    n_cols = z.shape[1]
    norms = np.linalg.norm(z, axis=0)
    norms[norms == 0] = np.inf
    y_norm = np.linalg.norm(Y)
    exhausted = n_select > n_cols
    selected: list[int] = []
    R = Y.copy()
    x = np.zeros((0, Y.shape[1]), dtype=complex)
    history = [float(np.linalg.norm(R))]
    for _ in range(min(n_select, n_cols)):
        if history[-1] <= tol * y_norm:
            break
        score = np.abs(z.conj().T @ R).sum(axis=1) / norms
        score[selected] = -np.inf
        selected.append(int(np.argmax(score)))
        x = _lstsq(z[:, selected], Y)
        R = Y - z[:, selected] @ x
        history.append(float(np.linalg.norm(R)))
    full = np.zeros((n_cols, Y.shape[1]), dtype=complex)
    if selected:
        full[selected] = x
    return full, selected, history, exhausted


def somp(obs: ObservationSet, meas: MeasurementSystem, n_select: int, tol: float = RESIDUAL_TOL) -> RecoveryResult:
    """Simultaneous OMP: one column of ``Z`` per iteration, shared by all D orders.

    ``n_select`` counts columns (antenna-tap pairs); pass ``K * N_B`` for a
    channel with K active taps.
    """
    if n_select < 0:
        raise ParameterError(f"n_select must be non-negative, got {n_select}")
    lam, selected, history, exhausted = _somp_columns(meas.z, obs.y_blocks, n_select, tol)
    support = _taps_of_columns(selected, meas.channel_length)
    coeffs = BemCoefficientMatrix(meas.n_antennas, meas.channel_length, obs.y_blocks.shape[1], lam, support)
    return RecoveryResult(coeffs, support, history[-1], "SOMP", history, exhausted)


def bsomp(obs: ObservationSet, meas: MeasurementSystem, n_blocks: int, tol: float = RESIDUAL_TOL) -> RecoveryResult:
    """Block SOMP: one tap (all antennas at once) per iteration, shared by all D orders."""
    L = meas.channel_length
    if n_blocks < 0:
        raise ParameterError(f"n_blocks must be non-negative, got {n_blocks}")
    Y = obs.y_blocks
    z = meas.z
    # G x N_B x L view so that blocks[:, :, l] holds tap l for every antenna
    blocks = z.reshape(z.shape[0], meas.n_antennas, L)
    y_norm = np.linalg.norm(Y)
    chosen: list[int] = []
    cols: list[int] = []
    R = Y.copy()
    x = np.zeros((0, Y.shape[1]), dtype=complex)
    history = [float(np.linalg.norm(R))]
    for _ in range(min(n_blocks, L)):
        if history[-1] <= tol * y_norm:
            break
        corr = np.einsum("gbl,gd->bld", blocks.conj(), R)
        score = np.sqrt(np.sum(np.abs(corr) ** 2, axis=(0, 2)))
        score[chosen] = -np.inf
        l = int(np.argmax(score))
        chosen.append(l)
        cols.extend(meas.block_index[l].tolist())
        x = _lstsq(z[:, cols], Y)
        R = Y - z[:, cols] @ x
        history.append(float(np.linalg.norm(R)))
    lam = np.zeros((z.shape[1], Y.shape[1]), dtype=complex)
    if cols:
        lam[cols] = x
    support = tuple(sorted(chosen))
    coeffs = BemCoefficientMatrix(meas.n_antennas, L, Y.shape[1], lam, support)
    return RecoveryResult(coeffs, support, history[-1], "BSOMP", history, n_blocks > L)


def uplink_dcs_estimate(
    per_antenna_obs: list, pattern: PilotPattern, sparsity: int, channel_length: int, tol: float = RESIDUAL_TOL
) -> list:
    """Joint uplink estimate: every receive antenna sees the same pilot matrix.

    All ``N_B * D`` observation columns share one tap support, so they are
    stacked side by side and solved as a single SOMP problem against
    ``diag(P') F``.
    """
    if pattern.n_antennas != 1:
        raise DimensionError("uplink estimation expects a single shared pilot sequence")
    if not per_antenna_obs:
        raise DimensionError("no observations")
    shapes = {o.y_blocks.shape for o in per_antenna_obs}
    if len(shapes) != 1:
        raise DimensionError(f"inconsistent observation shapes {sorted(shapes)}")
    G, D = per_antenna_obs[0].y_blocks.shape
    if G != pattern.n_groups:
        raise DimensionError(f"observations have {G} rows, pattern has {pattern.n_groups} groups")
    z = measurement_matrix(pattern.center_indices, pattern.pilot_values, channel_length, pattern.n_subcarriers)
    Y = np.concatenate([o.y_blocks for o in per_antenna_obs], axis=1)
    theta, selected, history, exhausted = _somp_columns(z, Y, sparsity, tol)
    support = tuple(sorted(selected))
    results = []
    for k, o in enumerate(per_antenna_obs):
        part = theta[:, k * D:(k + 1) * D]
        residual = float(np.linalg.norm(o.y_blocks - z @ part))
        coeffs = BemCoefficientMatrix(1, channel_length, D, part, support)
        results.append(RecoveryResult(coeffs, support, residual, "UplinkDCS", history, exhausted))
    return results


def reconstruct_channel(result: RecoveryResult, basis: BemBasis) -> np.ndarray:
    """Taps ``h[nb, n, l] = sum_d v_d[n] theta[nb, l, d]`` as an ``N_B x N x L`` array."""
    theta = result.coeffs.as_array()
    if theta.shape[2] != basis.order:
        raise DimensionError(f"coefficients have order {theta.shape[2]}, basis has {basis.order}")
    return np.einsum("nd,bld->bnl", basis.matrix, theta)


def linear_smoothing(taps_estimate: np.ndarray, support) -> np.ndarray:
    """Replace each active tap's trajectory by the line through its two half-means.

    The mean of each half of the symbol sits at that half's centroid
    (``N/4 - 1/2`` and ``3N/4 - 1/2``); the line through those two points is
    evaluated at every instant. Inactive taps are left untouched.
    """
    h = np.asarray(taps_estimate)
    if h.ndim != 3:
        raise DimensionError(f"expected an N_B x N x L array, got shape {h.shape}")
    N, L = h.shape[1], h.shape[2]
    if N % 4:
        raise ParameterError(f"N must be divisible by 4, got {N}")
    support = [int(l) for l in support]
    if any(l < 0 or l >= L for l in support):
        raise ParameterError(f"support {support} outside [0, {L - 1}]")
    out = h.copy()
    if not support:
        return out
    active = h[:, :, support]
    first = active[:, : N // 2, :].mean(axis=1)
    second = active[:, N // 2:, :].mean(axis=1)
    slope = (second - first) / (N / 2)
    n = np.arange(N)[None, :, None]
    out[:, :, support] = first[:, None, :] + (n - (N / 4 - 0.5)) * slope[:, None, :]
    return out


def nmse(estimate: np.ndarray, truth: np.ndarray) -> float:
    """Normalized squared error in dB, floored at -300 dB."""
    estimate, truth = np.asarray(estimate), np.asarray(truth)
    if estimate.shape != truth.shape:
        raise DimensionError(f"shape mismatch {estimate.shape} vs {truth.shape}")
    ref = np.sum(np.abs(truth) ** 2)
    if ref == 0:
        raise DegenerateInputError("reference channel is identically zero")
    err = np.sum(np.abs(estimate - truth) ** 2)
    if err == 0:
        return NMSE_FLOOR_DB
    return max(float(10 * np.log10(err / ref)), NMSE_FLOOR_DB)
