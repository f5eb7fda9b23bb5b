"""Built-in identity and oracle checks run by ``bdcs verify``."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from bdcs._random import stream
from bdcs.bem import (
    bem_freq_channel,
    bem_to_time_channel,
    build_cebem_basis,
    circulant_from_dft,
    time_channel_from_taps,
    taps_from_coefficients,
    time_to_freq_channel,
)
from bdcs.channel import SystemConfig, draw_common_support, exact_bem_channel, random_block_sparse_coefficients
from bdcs.pilot import (
    PilotPattern,
    assemble_measurement_matrix,
    bdso_optimize,
    random_feasible_positions,
    random_sign_sequences,
)
from bdcs.recovery import ObservationSet, bsomp, extract_pilot_observations
from bdcs.sim import build_transmit_frame, received_signal


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _complex_normal(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def check_circulant(seed=0, offset_sign=1) -> CheckResult:
    rng = stream(seed, "verify-circulant")
    N, L = 16, 4
    c = _complex_normal(rng, L)
    expected = np.zeros((N, N), dtype=complex)
    for p in range(N):
        for q in range(N):
            lag = (p - q) % N
            expected[p, q] = c[lag] if lag < L else 0
    err = np.abs(circulant_from_dft(c, N) - expected).max()
    return CheckResult("circulant-diagonalization", err < 1e-10, f"max error {err:.2e}")


def check_path_equivalence(seed=0, offset_sign=1) -> CheckResult:
    rng = stream(seed, "verify-paths")
    N, L, D = 16, 4, 3
    basis = build_cebem_basis(N, D)
    theta = _complex_normal(rng, (L, D))
    direct = time_channel_from_taps(taps_from_coefficients(theta, basis))
    via_bem = bem_to_time_channel(theta, basis)
    freq = bem_freq_channel(theta, basis)
    err = max(np.abs(direct - via_bem).max(), np.abs(time_to_freq_channel(via_bem) - freq).max())
    return CheckResult("time-frequency-path-equivalence", err < 1e-10, f"max error {err:.2e}")


def _tiny_pattern(seed, N=32, G=6, D=3, NB=2):
    positions = random_feasible_positions(N, G, D, stream(seed, "verify-positions"))
    return PilotPattern(N, G, D, positions, random_sign_sequences(NB, G, seed))


def check_index_sets(seed=0, offset_sign=1) -> CheckResult:
    pattern = _tiny_pattern(seed)
    S = pattern.derived_sets(offset_sign)
    d = np.arange(pattern.bem_order)[:, None]
    ok = np.all((S - S[0][None, :]) % pattern.n_subcarriers == d % pattern.n_subcarriers)
    ok &= np.array_equal(S[pattern.center], pattern.center_indices)
    disjoint = len(np.unique(S)) == S.size
    return CheckResult("pilot-index-consistency", bool(ok and disjoint), f"disjoint={disjoint}")


def check_block_isometry(seed=0, offset_sign=1) -> CheckResult:
    pattern = _tiny_pattern(seed, NB=3)
    meas = assemble_measurement_matrix(pattern, 8)
    rel = abs(np.linalg.norm(meas.z_s) - np.linalg.norm(meas.z)) / np.linalg.norm(meas.z)
    col = max(
        abs(np.linalg.norm(meas.z_s[:, l]) ** 2 - np.linalg.norm(meas.block(l)) ** 2) for l in range(8)
    )
    return CheckResult("block-flatten-isometry", rel < 1e-12 and col < 1e-9, f"relative {rel:.2e}")


def check_pilot_purity(seed=0, offset_sign=1) -> CheckResult:
    """Noiseless exact-BEM channel with random data: pilots obey ``Y = Z Lambda`` exactly."""
    pattern = _tiny_pattern(seed, N=64, G=8, NB=3)
    L, K = 8, 3
    basis = build_cebem_basis(pattern.n_subcarriers, pattern.bem_order)
    support = draw_common_support(L, K, seed)
    coeffs = random_block_sparse_coefficients(pattern.n_antennas, L, pattern.bem_order, support, stream(seed, "verify-c"))
    channel = exact_bem_channel(coeffs, basis)
    frame = build_transmit_frame(pattern, None, seed)
    received = received_signal(frame.symbols, channel.taps)
    obs = extract_pilot_observations(received, pattern, offset_sign=offset_sign)
    meas = assemble_measurement_matrix(pattern, L)
    rel = np.linalg.norm(obs.y_blocks - meas.z @ coeffs.data) / np.linalg.norm(obs.y_blocks)
    return CheckResult("ici-free-pilot-purity", rel < 1e-9, f"relative residual {rel:.2e}")


def check_overhead(seed=0, offset_sign=1) -> CheckResult:
    N, G, D = 4096, 192, 3
    overhead = G * (2 * D - 1) / N
    return CheckResult("pilot-overhead", abs(overhead - 0.234375) < 1e-15, f"overhead {overhead}")


def exhaustive_block_support(obs: ObservationSet, meas, k: int):
    """Brute-force block support minimizing the block least-squares residual."""
    best = (np.inf, ())
    for support in combinations(range(meas.channel_length), k):
        cols = np.concatenate([meas.block_index[l] for l in support])
        A = meas.z[:, cols]
        x = np.linalg.lstsq(A, obs.y_blocks, rcond=None)[0]
        r = float(np.linalg.norm(obs.y_blocks - A @ x))
        if r < best[0] - 1e-12:
            best = (r, support)
    return best[1], best[0]


def check_bsomp_oracle(seed=0, offset_sign=1, instances=5) -> CheckResult:
    # G=12 with optimized positions: at G=6 greedy selection misses ~1 in 7
    # instances, which would make this check flaky rather than informative.
    L, K, NB = 8, 2, 2
    config = SystemConfig(n_subcarriers=64, n_groups=12, bem_order=3, channel_length=L, sparsity=K, n_antennas=NB)
    misses = []
    for i in range(instances):
        s = seed * instances + i
        values = random_sign_sequences(NB, config.n_groups, s)
        positions = bdso_optimize(config, values, 200, s).positions
        pattern = PilotPattern(config.n_subcarriers, config.n_groups, config.bem_order, positions, values)
        meas = assemble_measurement_matrix(pattern, L)
        support = draw_common_support(L, K, s)
        coeffs = random_block_sparse_coefficients(NB, L, config.bem_order, support, stream(s, "verify-o"))
        obs = ObservationSet(meas.z @ coeffs.data)
        oracle, oracle_res = exhaustive_block_support(obs, meas, K)
        result = bsomp(obs, meas, K)
        if result.support != tuple(oracle) and abs(result.residual_norm - oracle_res) >= 1e-6:
            misses.append(s)
    return CheckResult("bsomp-exhaustive-oracle", not misses, f"{instances - len(misses)}/{instances} agree")


CHECKS = (
    check_circulant,
    check_path_equivalence,
    check_index_sets,
    check_block_isometry,
    check_pilot_purity,
    check_overhead,
    check_bsomp_oracle,
)


def run_checks(seed: int = 0, offset_sign: int = 1) -> list:
    return [check(seed=seed, offset_sign=offset_sign) for check in CHECKS]
