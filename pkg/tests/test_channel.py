import warnings

import numpy as np
import pytest

from bdcs._random import stream
from bdcs.bem import build_cebem_basis, fit_bem_coefficients
from bdcs.channel import (
    SPEED_OF_LIGHT,
    CommonSupportWarning,
    SystemConfig,
    draw_common_support,
    exact_bem_channel,
    generate_ds_channel,
    itu_vehicular_b,
    random_block_sparse_coefficients,
    read_channel_csv,
    tap_power_profile,
    write_channel_csv,
)
from bdcs.bem import BemCoefficientMatrix
from bdcs.errors import DimensionError, InfeasibleError, ParameterError


@pytest.fixture
def small():
    return SystemConfig(n_subcarriers=64, n_groups=4, channel_length=10, sparsity=3, n_antennas=2)


class TestSystemConfig:
    def test_defaults_valid(self):
        cfg = SystemConfig()
        assert cfg.pilot_overhead == pytest.approx(24 * 5 / 512)

    def test_groups_must_fit(self):
        with pytest.raises(InfeasibleError):
            SystemConfig(n_subcarriers=32, n_groups=8, channel_length=10)

    def test_sparsity_above_length(self):
        with pytest.raises(ParameterError):
            SystemConfig(channel_length=4, sparsity=5)

    def test_even_order(self):
        with pytest.raises(ParameterError):
            SystemConfig(bem_order=2)

    def test_doppler_from_speed(self):
        cfg = SystemConfig()
        fd = (300 / 3.6) * 2.35e9 / SPEED_OF_LIGHT
        assert cfg.doppler_hz == pytest.approx(fd, rel=1e-12)
        # the usual quoted figure rounds c to 3e8
        assert cfg.doppler_hz == pytest.approx(652.8, rel=1e-3)
        assert cfg.normalized_doppler == pytest.approx(fd * 512 / 20e6)

    def test_with_normalized_doppler(self):
        cfg = SystemConfig().with_normalized_doppler(0.1)
        assert cfg.normalized_doppler == pytest.approx(0.1, rel=1e-12)

    def test_spacing_flag(self):
        assert SystemConfig().common_support_holds
        assert not SystemConfig(max_antenna_spacing_m=2.0).common_support_holds


class TestSupport:
    def test_full(self):
        assert draw_common_support(5, 5, 11) == (0, 1, 2, 3, 4)

    def test_single(self):
        assert draw_common_support(1, 1, 0) == (0,)

    def test_deterministic(self):
        a = draw_common_support(200, 6, 42)
        assert a == draw_common_support(200, 6, 42)
        assert len(set(a)) == 6 and list(a) == sorted(a)

    def test_too_many(self):
        with pytest.raises(ParameterError):
            draw_common_support(3, 4, 0)


class TestPowerProfile:
    def test_vehicular_b_sample_delays(self):
        delays, powers = itu_vehicular_b(20e6)
        assert list(delays) == [0, 6, 178, 258, 342, 400]
        assert powers.max() == pytest.approx(1.0)

    @pytest.mark.parametrize("k", [1, 2, 4, 6, 9])
    def test_normalized(self, k):
        p = tap_power_profile(k)
        assert len(p) == k
        assert p.sum() == pytest.approx(1.0)

    def test_strongest_kept_in_delay_order(self):
        _, raw = itu_vehicular_b(1.0)
        p = tap_power_profile(2)
        assert p[0] / p[1] == pytest.approx(raw[0] / raw[1])


class TestGenerator:
    def test_support_exact(self, small):
        ch = generate_ds_channel(small, (1, 4, 8), 3)
        energy = np.abs(ch.taps).sum(axis=1)
        assert np.all(energy[:, [1, 4, 8]] > 0)
        assert np.all(np.delete(energy, [1, 4, 8], axis=1) == 0)

    def test_static_when_speed_zero(self, small):
        ch = generate_ds_channel(small.replace(speed_mps=0.0), (2, 5, 6), 1)
        np.testing.assert_allclose(ch.taps, ch.taps[:, :1, :].repeat(64, axis=1), atol=1e-14)

    def test_empty_support(self, small):
        ch = generate_ds_channel(small.replace(sparsity=0), (), 0)
        assert not np.any(ch.taps)

    def test_reproducible(self, small):
        a = generate_ds_channel(small, (0, 3, 9), 17)
        b = generate_ds_channel(small, (0, 3, 9), 17)
        np.testing.assert_array_equal(a.taps, b.taps)

    def test_bad_support(self, small):
        with pytest.raises(ParameterError):
            generate_ds_channel(small, (0, 10), 0)

    def test_spacing_warning(self, small):
        with pytest.warns(CommonSupportWarning):
            generate_ds_channel(small.replace(max_antenna_spacing_m=5.0), (0, 1, 2), 0)

    def test_no_warning_by_default(self, small):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            generate_ds_channel(small, (0, 1, 2), 0)

    def test_power_calibration(self):
        cfg = SystemConfig(n_subcarriers=64, n_groups=4, channel_length=8, sparsity=3, n_antennas=1)
        support = (0, 2, 5)
        acc = np.zeros(3)
        n = 4000
        for s in range(n):
            taps = generate_ds_channel(cfg, support, s).taps[0]
            acc += np.mean(np.abs(taps[:, support]) ** 2, axis=0)
        np.testing.assert_allclose(acc / n, tap_power_profile(3), rtol=0.05)

    def test_doppler_spread(self):
        # autocorrelation at lag k should follow J0(2 pi fd k)
        from scipy.special import j0

        cfg = SystemConfig(n_subcarriers=256, n_groups=4, channel_length=2, sparsity=1, n_antennas=1)
        cfg = cfg.with_normalized_doppler(2.0)
        fd = cfg.doppler_hz / cfg.bandwidth_hz
        lags = [8, 32, 64]
        acc = np.zeros(len(lags), dtype=complex)
        trials = 400
        for s in range(trials):
            x = generate_ds_channel(cfg, (0,), s).taps[0, :, 0]
            acc += [np.mean(x[k:] * x[:-k].conj()) for k in lags]
        np.testing.assert_allclose((acc / trials).real, j0(2 * np.pi * fd * np.array(lags)), atol=0.1)


class TestExactBem:
    def test_zero(self):
        b = build_cebem_basis(16, 3)
        c = BemCoefficientMatrix(2, 4, 3, np.zeros((8, 3)), ())
        assert not np.any(exact_bem_channel(c, b).taps)

    def test_order_one_constant(self):
        b = build_cebem_basis(16, 1)
        c = random_block_sparse_coefficients(2, 5, 1, (1, 3), np.random.default_rng(0))
        taps = exact_bem_channel(c, b).taps
        np.testing.assert_allclose(taps, np.broadcast_to(c.as_array()[:, None, :, 0], taps.shape), atol=1e-14)

    def test_fit_round_trip(self):
        b = build_cebem_basis(32, 3)
        c = random_block_sparse_coefficients(3, 8, 3, (0, 5, 6), stream(1, "x"))
        taps = exact_bem_channel(c, b).taps
        back = np.stack([[fit_bem_coefficients(taps[nb, :, l], b) for l in range(8)] for nb in range(3)])
        np.testing.assert_allclose(back, c.as_array(), atol=1e-10)

    def test_order_mismatch(self):
        c = random_block_sparse_coefficients(1, 4, 3, (0,), np.random.default_rng(0))
        with pytest.raises(DimensionError):
            exact_bem_channel(c, build_cebem_basis(8, 1))

    def test_powers_sum_to_one(self):
        c = random_block_sparse_coefficients(2, 6, 3, (1, 2), np.random.default_rng(2))
        assert exact_bem_channel(c, build_cebem_basis(8, 3)).tap_powers.sum() == pytest.approx(1.0)


def test_csv_round_trip(tmp_path, small):
    ch = generate_ds_channel(small, (0, 4, 7), 5)
    path = tmp_path / "ch.csv"
    write_channel_csv(ch, path)
    back = read_channel_csv(path)
    np.testing.assert_array_equal(back.taps, ch.taps)
    np.testing.assert_array_equal(back.tap_powers, ch.tap_powers)
    assert back.support == ch.support
    assert path.read_text().splitlines()[3].startswith("0,0,0,")
