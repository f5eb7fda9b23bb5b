import math

import numpy as np
import pytest

from bdcs._random import stream
from bdcs.bem import build_cebem_basis, time_channel_from_taps, time_to_freq_channel
from bdcs.channel import (
    ChannelRealization,
    SystemConfig,
    exact_bem_channel,
    generate_ds_channel,
    random_block_sparse_coefficients,
)
from bdcs.errors import ParameterError
from bdcs.pilot import PilotPattern, assemble_measurement_matrix, equidistant_positions, random_sign_sequences
from bdcs.recovery import extract_pilot_observations
from bdcs.sim import (
    RESULT_FIELDS,
    ExperimentSpec,
    add_noise,
    apply_channel,
    build_transmit_frame,
    design_pattern,
    qpsk_map,
    received_signal,
    results_to_csv,
    run_experiment,
    run_trial,
)

TINY = SystemConfig(n_subcarriers=64, n_groups=6, bem_order=3, channel_length=8, sparsity=2, n_antennas=2)


def eq_pattern(N=64, G=6, D=3, NB=2, seed=0):
    return PilotPattern(N, G, D, equidistant_positions(N, G, D), random_sign_sequences(NB, G, seed))


class TestFrame:
    def test_gray_map(self):
        s = qpsk_map([0, 0, 0, 1, 1, 1, 1, 0]) * np.sqrt(2)
        np.testing.assert_allclose(s, [1 + 1j, -1 + 1j, -1 - 1j, 1 - 1j])

    def test_all_pilot(self):
        p = eq_pattern(N=30, G=6)
        f = build_transmit_frame(p, np.zeros(0, dtype=int))
        assert not f.data_mask.any()
        assert f.data_bits.size == 0

    def test_layout(self):
        p = eq_pattern(NB=3)
        f = build_transmit_frame(p, None, 5)
        assert np.all(f.symbols[:, p.guard_indices()] == 0)
        np.testing.assert_array_equal(f.symbols[:, p.center_indices], p.pilot_values)
        assert f.pilot_mask.sum() == 6 * 3
        energy = np.mean(np.abs(f.symbols[:, f.data_mask]) ** 2, axis=1)
        np.testing.assert_allclose(energy, 1.0, atol=1e-12)

    def test_bits_used_in_order(self):
        p = eq_pattern(NB=1)
        n = 2 * (64 - 30)
        bits = np.tile([1, 1], n // 2)
        f = build_transmit_frame(p, bits)
        np.testing.assert_allclose(f.symbols[0, f.data_mask], (-1 - 1j) / np.sqrt(2))

    def test_bit_shortfall(self):
        with pytest.raises(ParameterError):
            build_transmit_frame(eq_pattern(), np.zeros(10, dtype=int))


class TestChannelApplication:
    def test_matches_dense_matrices(self):
        p = eq_pattern()
        f = build_transmit_frame(p, None, 1)
        ch = generate_ds_channel(TINY, (1, 5), 3)
        dense = sum(time_to_freq_channel(time_channel_from_taps(ch.taps[nb])) @ f.symbols[nb] for nb in range(2))
        np.testing.assert_allclose(received_signal(f.symbols, ch.taps), dense, atol=1e-10)

    def test_zero_channel(self):
        f = build_transmit_frame(eq_pattern(), None, 1)
        ch = ChannelRealization(np.zeros((2, 64, 8), dtype=complex), ())
        assert not np.any(apply_channel(f, ch, 20.0, 0))

    def test_flat_static_superposition(self):
        f = build_transmit_frame(eq_pattern(), None, 1)
        taps = np.zeros((2, 64, 8), dtype=complex)
        taps[:, :, 0] = 1
        y = apply_channel(f, ChannelRealization(taps, (0,)), math.inf)
        np.testing.assert_allclose(y, f.symbols.sum(axis=0), atol=1e-12)

    def test_exact_bem_forward_consistency(self):
        p = eq_pattern(NB=2)
        basis = build_cebem_basis(64, 3)
        coeffs = random_block_sparse_coefficients(2, 8, 3, (0, 6), stream(0, "c"))
        f = build_transmit_frame(p, None, 3)
        y = apply_channel(f, exact_bem_channel(coeffs, basis), math.inf)
        obs = extract_pilot_observations(y, p)
        meas = assemble_measurement_matrix(p, 8)
        assert np.linalg.norm(obs.y_blocks - meas.z @ coeffs.data) < 1e-9 * np.linalg.norm(obs.y_blocks)

    def test_slow_channel_small_model_error(self):
        p = eq_pattern()
        meas = assemble_measurement_matrix(p, 8)
        basis = build_cebem_basis(64, 3)
        f = build_transmit_frame(p, None, 0)
        residuals = []
        for nu in (0.5, 0.05, 0.005):
            ch = generate_ds_channel(TINY.with_normalized_doppler(nu), (2, 4), 0)
            theta = np.stack([basis.matrix.conj().T @ ch.taps[nb] / 64 for nb in range(2)])
            lam = theta.transpose(0, 2, 1).reshape(16, 3)
            obs = extract_pilot_observations(received_signal(f.symbols, ch.taps), p)
            residuals.append(np.linalg.norm(obs.y_blocks - meas.z @ lam) / np.linalg.norm(obs.y_blocks))
        assert residuals[0] > residuals[1] > residuals[2]
        assert residuals[2] < 1e-2

    def test_snr_calibration(self):
        f = build_transmit_frame(eq_pattern(), None, 0)
        ratios = []
        for seed in range(1000):
            clean = received_signal(f.symbols, generate_ds_channel(TINY, (0, 3), seed).taps)
            noisy, _ = add_noise(clean, 10.0, stream(seed, "snr"))
            ratios.append(np.sum(np.abs(clean) ** 2) / np.sum(np.abs(noisy - clean) ** 2))
        assert 10 * np.log10(np.mean(ratios)) == pytest.approx(10.0, abs=0.2)


class TestExperiment:
    def spec(self, **kw):
        base = dict(sweep_values=(20.0,), trials=1, methods=("BSOMP",), pilot_scheme="equidistant", base_config=TINY)
        base.update(kw)
        return ExperimentSpec(**base)

    def test_row_counts(self):
        assert len(run_experiment(self.spec(smoothing=False))) == 1
        rows = run_experiment(self.spec())
        assert [r.method for r in rows] == ["BSOMP", "BSOMP-li"]

    def test_byte_identical(self):
        s = self.spec(trials=3, methods=("LS", "SOMP", "BSOMP"), pilot_scheme="bdso", pilot_iterations=30)
        assert results_to_csv(run_experiment(s)) == results_to_csv(run_experiment(s))

    def test_threads_do_not_change_output(self):
        s = self.spec(trials=4, sweep_values=(10.0, 30.0))
        assert results_to_csv(run_experiment(s, threads=2)) == results_to_csv(run_experiment(s, threads=1))

    def test_csv_header(self):
        text = results_to_csv(run_experiment(self.spec()))
        assert text.splitlines()[0] == ",".join(RESULT_FIELDS)

    def test_failed_trial_is_recorded(self):
        cfg = TINY.replace(sparsity=0)  # zero channel: nmse has no reference
        rows = run_trial(cfg, eq_pattern(), self.spec(base_config=cfg), 0)
        assert len(rows) == 1 and math.isnan(rows[0].nmse_db)

    def test_sweep_variables(self):
        s = self.spec(sweep_variable="sparsity", sweep_values=(1, 3), smoothing=False)
        assert [r.K for r in run_experiment(s)] == [1, 3]
        s = self.spec(sweep_variable="doppler", sweep_values=(0.05,), smoothing=False)
        assert run_experiment(s)[0].doppler_norm == pytest.approx(0.05)

    def test_iterations_sweep(self):
        s = self.spec(sweep_variable="iterations", sweep_values=(0, 10, 20), trials=1)
        rows = run_experiment(s)
        assert len(rows) == 9
        bdso = [mu for scheme, _, _, mu in rows if scheme == "bdso"]
        assert bdso[0] >= bdso[1] >= bdso[2]
        assert results_to_csv(rows).startswith("scheme,seed,iteration,mu\n")

    def test_bad_spec(self):
        with pytest.raises(ParameterError):
            self.spec(trials=0)
        with pytest.raises(ParameterError):
            self.spec(sweep_variable="speed")
        with pytest.raises(ParameterError):
            self.spec(methods=("OMP",))

    def test_design_pattern_schemes(self):
        for scheme in ("equidistant", "bdso", "ga"):
            p = design_pattern(TINY, scheme, 5, 0)
            p.validate()

    def test_uplink_rows(self):
        rows = run_experiment(self.spec(methods=("UplinkDCS",), smoothing=False))
        assert rows[0].method == "UplinkDCS" and not math.isnan(rows[0].nmse_db)


def test_bsomp_improves_with_snr_until_floor():
    # identifiable small system (N_B * L <= G * D): NMSE falls with SNR and then flattens
    cfg = SystemConfig(n_subcarriers=256, n_groups=12, channel_length=16, sparsity=2, n_antennas=2)
    spec = ExperimentSpec(sweep_values=(0, 10, 20, 30, 40), trials=30, methods=("BSOMP",), smoothing=False,
                          pilot_scheme="bdso", pilot_iterations=200, base_config=cfg.with_normalized_doppler(0.02))
    rows = run_experiment(spec)
    med = [np.median([r.nmse_db for r in rows if r.snr_db == s]) for s in spec.sweep_values]
    assert all(b <= a + 0.5 for a, b in zip(med, med[1:]))
    assert med[0] - med[-1] > 10
