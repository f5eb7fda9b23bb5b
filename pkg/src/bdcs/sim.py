"""OFDM symbol construction, channel application and Monte-Carlo sweeps."""

from __future__ import annotations

import csv
import dataclasses
import io
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from bdcs._random import stream
from bdcs.bem import build_cebem_basis
from bdcs.channel import (
    ChannelRealization,
    SystemConfig,
    draw_common_support,
    exact_bem_channel,
    generate_ds_channel,
    random_block_sparse_coefficients,
)
from bdcs.errors import DimensionError, ParameterError
from bdcs.pilot import (
    PilotPattern,
    assemble_measurement_matrix,
    bdso_optimize,
    block_coherence,
    equidistant_positions,
    ga_optimize,
    random_sign_sequences,
)
from bdcs.recovery import (
    bsomp,
    extract_pilot_observations,
    linear_smoothing,
    nmse,
    reconstruct_channel,
    solve_ls,
    somp,
    uplink_dcs_estimate,
)

SWEEP_VARIABLES = ("snr", "doppler", "sparsity", "antennas", "iterations")
PILOT_SCHEMES = ("equidistant", "ga", "bdso")
RESULT_FIELDS = ("method", "seed", "snr_db", "doppler_norm", "n_antennas", "K", "nmse_db", "support_hit", "runtime_ms")
TRACE_FIELDS = ("scheme", "seed", "iteration", "mu")

# Gray-mapped QPSK, indexed by the integer value of the bit pair (b0 b1)
QPSK = np.array([1 + 1j, -1 + 1j, 1 - 1j, -1 - 1j]) / np.sqrt(2)


@dataclass
class TransmitFrame:
    symbols: np.ndarray  # N_B x N
    pilot_mask: np.ndarray  # True on every S_d position
    data_mask: np.ndarray  # True where QPSK data is carried
    data_bits: np.ndarray


def qpsk_map(bits: np.ndarray) -> np.ndarray:
    """00 -> (1+j), 01 -> (-1+j), 11 -> (-1-j), 10 -> (1-j), all over sqrt(2)."""
    bits = np.asarray(bits, dtype=int).reshape(-1, 2)
    return QPSK[2 * bits[:, 0] + bits[:, 1]]


def build_transmit_frame(pattern: PilotPattern, data_bits=None, rng_seed: int = 0) -> TransmitFrame:
    """Place pilots, zero guards and QPSK data on every antenna.

    ``data_bits`` needs two bits per data subcarrier per antenna; when omitted
    they are drawn from the seeded stream.
    """
    N, NB = pattern.n_subcarriers, pattern.n_antennas
    reserved = np.zeros(N, dtype=bool)
    reserved[pattern.guard_indices()] = True
    reserved[pattern.center_indices] = True
    data_mask = ~reserved
    pilot_mask = np.zeros(N, dtype=bool)
    pilot_mask[pattern.derived_sets().ravel()] = True
    n_bits = 2 * int(data_mask.sum()) * NB
    if data_bits is None:
        data_bits = stream(rng_seed, "data-bits").integers(0, 2, n_bits)
    data_bits = np.asarray(data_bits, dtype=int)
    if data_bits.size < n_bits:
        raise ParameterError(f"need {n_bits} data bits, got {data_bits.size}")
    data_bits = data_bits[:n_bits]
    symbols = np.zeros((NB, N), dtype=complex)
    if n_bits:
        symbols[:, data_mask] = qpsk_map(data_bits).reshape(NB, -1)
    symbols[:, pattern.center_indices] = pattern.pilot_values
    return TransmitFrame(symbols, pilot_mask, data_mask, data_bits)


def _through_channel(symbols: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """``W H_t W^H s`` for one antenna without forming N x N matrices."""
    N = symbols.shape[0]
    x = np.fft.ifft(symbols) * np.sqrt(N)
    y = np.zeros(N, dtype=complex)
    for l in np.flatnonzero(np.any(taps != 0, axis=0)):
        y += taps[:, l] * np.roll(x, l)
    return np.fft.fft(y) / np.sqrt(N)


def received_signal(symbols: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Noiseless receive vector ``sum_nb H_f^(nb) S^(nb)``."""
    symbols = np.atleast_2d(symbols)
    if symbols.shape[0] != taps.shape[0] or symbols.shape[1] != taps.shape[1]:
        raise DimensionError(f"symbols {symbols.shape} do not match taps {taps.shape}")
    return sum(_through_channel(symbols[nb], taps[nb]) for nb in range(taps.shape[0]))


def add_noise(clean: np.ndarray, snr_db: float, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """Complex Gaussian noise at ``snr_db`` relative to the mean received power."""
    if math.isinf(snr_db) and snr_db > 0:
        return clean.copy(), 0.0
    power = float(np.mean(np.abs(clean) ** 2))
    var = power / 10 ** (snr_db / 10)
    noise = np.sqrt(var / 2) * (rng.standard_normal(clean.shape) + 1j * rng.standard_normal(clean.shape))
    return clean + noise, var


def apply_channel(frame: TransmitFrame, channel: ChannelRealization, snr_db: float, rng_seed: int = 0) -> np.ndarray:
    """Received frequency-domain vector; ``snr_db=inf`` gives a noiseless one."""
    clean = received_signal(frame.symbols, channel.taps)
    noisy, _ = add_noise(clean, snr_db, stream(rng_seed, "noise"))
    return noisy


@dataclass
class ExperimentSpec:
    sweep_variable: str = "snr"
    sweep_values: tuple = (30.0,)
    trials: int = 1
    methods: tuple = ("LS", "SOMP", "BSOMP")
    pilot_scheme: str = "bdso"
    base_config: SystemConfig = field(default_factory=SystemConfig)
    seed: int = 0
    smoothing: bool = True
    exact_bem: bool = False
    pilot_iterations: int = 500
    record_runtime: bool = False

    def __post_init__(self):
        self.sweep_values = tuple(float(v) for v in self.sweep_values)
        self.methods = tuple(self.methods)
        if self.sweep_variable not in SWEEP_VARIABLES:
            raise ParameterError(f"unknown sweep variable {self.sweep_variable!r}")
        if self.pilot_scheme not in PILOT_SCHEMES:
            raise ParameterError(f"unknown pilot scheme {self.pilot_scheme!r}")
        if self.trials < 1:
            raise ParameterError("trials must be at least 1")
        if not self.sweep_values:
            raise ParameterError("sweep_values must not be empty")
        bad = [m for m in self.methods if m not in ("LS", "SOMP", "BSOMP", "UplinkDCS")]
        if bad:
            raise ParameterError(f"unknown recovery method(s) {bad}")

    def config_for(self, value: float) -> SystemConfig:
        cfg = self.base_config
        if self.sweep_variable == "snr":
            return cfg.replace(snr_db=value)
        if self.sweep_variable == "doppler":
            return cfg.with_normalized_doppler(value)
        if self.sweep_variable == "sparsity":
            return cfg.replace(sparsity=int(value))
        if self.sweep_variable == "antennas":
            return cfg.replace(n_antennas=int(value))
        return cfg


def trial_seed(seed: int, *keys) -> int:
    """64-bit seed for one (sweep point, trial) cell."""
    words = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in keys)).generate_state(2, np.uint32)
    return int(words[0]) << 32 | int(words[1])


def design_pattern(config: SystemConfig, scheme: str, iterations: int, seed: int, n_antennas=None) -> PilotPattern:
    """Pilot pattern for ``config`` with positions chosen by ``scheme``."""
    NB = config.n_antennas if n_antennas is None else n_antennas
    values = random_sign_sequences(NB, config.n_groups, seed)
    if scheme == "equidistant":
        positions = equidistant_positions(config.n_subcarriers, config.n_groups, config.bem_order)
    elif scheme == "bdso":
        positions = bdso_optimize(config, values, iterations, seed).positions
    elif scheme == "ga":
        positions = ga_optimize(config, values, iterations, seed).positions
    else:
        raise ParameterError(f"unknown pilot scheme {scheme!r}")
    return PilotPattern(config.n_subcarriers, config.n_groups, config.bem_order, positions, values)


@dataclass
class ResultRow:
    method: str
    seed: int
    snr_db: float
    doppler_norm: float
    n_antennas: int
    K: int
    nmse_db: float
    support_hit: int
    runtime_ms: float = 0.0

    def as_csv(self) -> list:
        return [
            self.method,
            str(self.seed),
            f"{self.snr_db:g}",
            f"{self.doppler_norm:.6g}",
            str(self.n_antennas),
            str(self.K),
            f"{self.nmse_db:.6f}",
            str(self.support_hit),
            f"{self.runtime_ms:.3f}",
        ]


def _draw_channel(config: SystemConfig, seed: int, exact_bem: bool) -> ChannelRealization:
    support = draw_common_support(config.channel_length, config.sparsity, seed)
    if exact_bem:
        basis = build_cebem_basis(config.n_subcarriers, config.bem_order)
        coeffs = random_block_sparse_coefficients(
            config.n_antennas, config.channel_length, config.bem_order, support, stream(seed, "coeffs")
        )
        return exact_bem_channel(coeffs, basis)
    return generate_ds_channel(config, support, seed)


def _uplink_estimate(config, pattern, channel, seed):
    """Uplink: one terminal pilot sequence, every base-station antenna receives."""
    shared = PilotPattern(pattern.n_subcarriers, pattern.n_groups, pattern.bem_order,
                          pattern.center_indices, pattern.pilot_values[:1])
    frame = build_transmit_frame(shared, None, seed)
    obs = []
    for nb in range(config.n_antennas):
        clean = received_signal(frame.symbols, channel.taps[nb:nb + 1])
        noisy, var = add_noise(clean, config.snr_db, stream(seed, "uplink-noise", nb))
        obs.append(extract_pilot_observations(noisy, shared, var))
    results = uplink_dcs_estimate(obs, shared, config.sparsity, config.channel_length)
    basis = build_cebem_basis(config.n_subcarriers, config.bem_order)
    est = np.concatenate([reconstruct_channel(r, basis) for r in results])
    return est, results[0].support


def run_trial(config: SystemConfig, pattern: PilotPattern, spec: ExperimentSpec, seed: int) -> list:
    """One Monte-Carlo draw; returns one row per method (plus smoothed variants)."""
    basis = build_cebem_basis(config.n_subcarriers, config.bem_order)
    channel = _draw_channel(config, seed, spec.exact_bem)
    truth = channel.taps
    frame = build_transmit_frame(pattern, None, seed)
    clean = received_signal(frame.symbols, truth)
    received, var = add_noise(clean, config.snr_db, stream(seed, "noise"))
    obs = extract_pilot_observations(received, pattern, var)
    meas = assemble_measurement_matrix(pattern, config.channel_length)
    true_support = set(channel.support)
    rows = []

    def row(method, value, hit, ms):
        return ResultRow(method, seed, config.snr_db, config.normalized_doppler, config.n_antennas,
                         config.sparsity, value, int(hit), ms if spec.record_runtime else 0.0)

    for method in spec.methods:
        t0 = time.perf_counter()
        try:
            if method == "UplinkDCS":
                est, support = _uplink_estimate(config, pattern, channel, seed)
            else:
                if method == "LS":
                    result = solve_ls(obs, meas)
                elif method == "SOMP":
                    result = somp(obs, meas, config.sparsity * config.n_antennas)
                else:
                    result = bsomp(obs, meas, config.sparsity)
                est, support = reconstruct_channel(result, basis), result.support
            ms = 1e3 * (time.perf_counter() - t0)
            hit = set(support) == true_support
            rows.append(row(method, nmse(est, truth), hit, ms))
            if spec.smoothing:
                smoothed = linear_smoothing(est, support)
                rows.append(row(method + "-li", nmse(smoothed, truth), hit, 1e3 * (time.perf_counter() - t0)))
        except Exception:  # noqa: BLE001 - a failed trial is recorded, the sweep goes on
            rows.append(row(method, float("nan"), False, 0.0))
    return rows


def _trial_task(args):
    config, pattern, spec, seed = args
    return run_trial(config, pattern, spec, seed)


def _trace_rows(spec: ExperimentSpec) -> list:
    config = spec.base_config
    checkpoints = sorted({int(v) for v in spec.sweep_values})
    top = max(checkpoints)
    rows = []
    for t in range(spec.trials):
        seed = trial_seed(spec.seed, 0, t)
        values = random_sign_sequences(config.n_antennas, config.n_groups, seed)
        eq = equidistant_positions(config.n_subcarriers, config.n_groups, config.bem_order)
        mu_eq = block_coherence(eq, values, config.channel_length, config.n_subcarriers)
        traces = {
            "equidistant": np.full(top + 1, mu_eq),
            "bdso": bdso_optimize(config, values, max(top, 1), seed).mu_trace,
            "ga": ga_optimize(config, values, top, seed).mu_trace,
        }
        for scheme in PILOT_SCHEMES:
            for it in checkpoints:
                rows.append((scheme, seed, it, float(traces[scheme][it])))
    return rows


def run_experiment(spec: ExperimentSpec, threads: int = 1) -> list:
    """Every (sweep value, trial) cell in deterministic order.

    Returns ``ResultRow`` objects, or ``(scheme, seed, iteration, mu)``
    tuples when sweeping BDSO/GA iterations.
    """
    if spec.sweep_variable == "iterations":
        return _trace_rows(spec)
    tasks = []
    patterns = {}
    for k, value in enumerate(spec.sweep_values):
        config = spec.config_for(value)
        key = (config.n_subcarriers, config.n_groups, config.bem_order, config.channel_length, config.n_antennas)
        if key not in patterns:
            patterns[key] = design_pattern(config, spec.pilot_scheme, spec.pilot_iterations, spec.seed)
        for t in range(spec.trials):
            tasks.append((config, patterns[key], spec, trial_seed(spec.seed, k, t)))
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(_trial_task, tasks, chunksize=max(1, len(tasks) // (4 * threads))))
    else:
        chunks = [_trial_task(t) for t in tasks]
    return [row for chunk in chunks for row in chunk]


def results_to_csv(rows: list) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if rows and not isinstance(rows[0], ResultRow):
        writer.writerow(TRACE_FIELDS)
        for scheme, seed, it, mu in rows:
            writer.writerow([scheme, seed, it, f"{mu:.12f}"])
    else:
        writer.writerow(RESULT_FIELDS)
        for r in rows:
            writer.writerow(r.as_csv())
    return buf.getvalue()


def read_results_csv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def manifest_text(spec: ExperimentSpec, extra: dict | None = None) -> str:
    lines = ["[experiment]"]
    for f in dataclasses.fields(spec):
        if f.name == "base_config":
            continue
        value = getattr(spec, f.name)
        if isinstance(value, tuple):
            value = ", ".join(str(v) for v in value)
        lines.append(f"{f.name} = {value}")
    lines.append("")
    lines.append("[system]")
    for f in dataclasses.fields(spec.base_config):
        lines.append(f"{f.name} = {getattr(spec.base_config, f.name)!r}")
    for section, values in (extra or {}).items():
        lines.append("")
        lines.append(f"[{section}]")
        lines += [f"{k} = {v}" for k, v in values.items()]
    return "\n".join(lines) + "\n"


def default_threads() -> int:
    return os.cpu_count() or 1


def write_outputs(rows: list, spec: ExperimentSpec, csv_path, manifest_path=None) -> None:
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    csv_path.write_text(results_to_csv(rows))
    if manifest_path is not None:
        Path(manifest_path).write_text(manifest_text(spec))
