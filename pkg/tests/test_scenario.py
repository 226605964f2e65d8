import numpy as np
import pytest

from lsfp import (ConfigError, ScenarioConfig, StatisticsError, covariance_sqrt_factors,
                  generate_network, local_scattering_covariance, sample_channels,
                  steering_vector)
from lsfp.scenario import RAYLEIGH_UNCORRELATED, _sample_batch

from _synth import manual_stats


def small_config(**kw):
    base = dict(L=4, K=2, M=6, tau_c=200, cell_side=100.0, seed=7)
    base.update(kw)
    return ScenarioConfig(**base)


class TestSteeringVector:
    def test_single_antenna(self):
        v = steering_vector(1, azimuth=0.7, elevation=-0.2, los_gain=4.0)
        assert v.shape == (1,)
        assert v[0] == pytest.approx(2.0)

    def test_boresight(self):
        v = steering_vector(3, azimuth=0.0, elevation=0.3, los_gain=1.0)
        np.testing.assert_allclose(v, np.ones(3))

    def test_endfire_alternates_sign(self):
        v = steering_vector(2, azimuth=np.pi / 2, elevation=0.0, los_gain=1.0)
        np.testing.assert_allclose(v, [1.0, -1.0], atol=1e-15)

    def test_constant_magnitude(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            gain = rng.uniform(0.1, 5.0)
            v = steering_vector(8, rng.uniform(-np.pi, np.pi), rng.uniform(-1, 1), gain)
            np.testing.assert_allclose(np.abs(v), np.sqrt(gain), rtol=1e-14)


class TestLocalScattering:
    def test_single_antenna(self):
        R = local_scattering_covariance(1, 0.4, 0.2, 3.0)
        np.testing.assert_allclose(R, [[3.0]])

    def test_diagonal_equals_gain(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            M = rng.integers(1, 9)
            R = local_scattering_covariance(int(M), rng.uniform(-1.2, 1.2),
                                            rng.uniform(0, 0.5), 2.5)
            np.testing.assert_allclose(np.diag(R).real, 2.5, rtol=1e-14)

    def test_zero_spread_is_rank_one(self):
        R = local_scattering_covariance(2, 0.0, 0.0, 1.5)
        np.testing.assert_allclose(R, 1.5 * np.ones((2, 2)))
        assert np.linalg.matrix_rank(R) == 1

    def test_zero_spread_matches_steering_outer_product(self):
        # the covariance phase convention must agree with the array response
        az, el = 0.6, 0.25
        eff = np.arcsin(np.sin(az) * np.cos(el))
        R = local_scattering_covariance(5, eff, 0.0, 1.0)
        v = steering_vector(5, az, el, 1.0)
        np.testing.assert_allclose(R, np.outer(v, v.conj()), atol=1e-14)

    def test_hermitian_psd_randomized(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            M = int(rng.integers(1, 9))
            R = local_scattering_covariance(M, rng.uniform(-1.5, 1.5),
                                            rng.uniform(0.0, 0.6), rng.uniform(0.1, 3))
            np.testing.assert_allclose(R, R.conj().T, atol=1e-12)
            eigs = np.linalg.eigvalsh(R)
            assert eigs.min() >= -1e-10 * np.trace(R).real


class TestGenerateNetwork:
    def test_deterministic_given_seed(self):
        cfg = small_config()
        s1, s2 = generate_network(cfg), generate_network(cfg)
        assert np.array_equal(s1.gbar, s2.gbar)
        assert np.array_equal(s1.R, s2.R)
        assert np.array_equal(s1.user_xy, s2.user_xy)

    def test_single_user_shapes(self):
        cfg = ScenarioConfig(L=1, K=1, M=3, tau_c=10, cell_side=100.0, seed=1)
        stats = generate_network(cfg)
        assert stats.gbar.shape == (1, 1, 1, 3)
        assert stats.R.shape == (1, 1, 1, 3, 3)

    def test_min_bs_distance_honored(self):
        cfg = small_config(min_bs_distance=30.0)
        stats = generate_network(cfg)
        d = np.linalg.norm(stats.user_xy[:, :, None, :] - stats.bs_xy[None, None, :, :],
                           axis=-1)
        assert d.min() >= cfg.min_bs_distance

    def test_trace_identity(self):
        stats = generate_network(small_config())
        tr_rbar = np.trace(stats.Rbar, axis1=-2, axis2=-1).real
        tr_r = np.trace(stats.R, axis1=-2, axis2=-1).real
        norm2 = np.einsum("lkrm,lkrm->lkr", stats.gbar.conj(), stats.gbar).real
        np.testing.assert_allclose(tr_rbar, tr_r + norm2, rtol=1e-12)

    def test_rbar_is_rank_one_update(self):
        stats = generate_network(small_config())
        outer = stats.gbar[..., :, None] * stats.gbar[..., None, :].conj()
        scale = np.abs(stats.Rbar).max()
        np.testing.assert_allclose(stats.Rbar - stats.R, outer, atol=1e-12 * scale)

    def test_covariances_psd(self):
        stats = generate_network(small_config())
        flat = stats.R.reshape(-1, stats.M, stats.M)
        for R in flat:
            assert np.linalg.eigvalsh(R).min() >= -1e-10 * max(np.trace(R).real, 1e-300)

    def test_rayleigh_mode(self):
        cfg = small_config(fading_kind=RAYLEIGH_UNCORRELATED)
        stats = generate_network(cfg)
        assert np.all(stats.gbar == 0)
        off = stats.R - np.diagonal(stats.R, axis1=-2, axis2=-1)[..., None] * np.eye(cfg.M)
        assert np.abs(off).max() == 0
        diags = np.diagonal(stats.R, axis1=-2, axis2=-1).real
        assert np.allclose(diags, diags[..., :1])  # gain * I

    def test_grid_requires_square_or_positions(self):
        with pytest.raises(ConfigError):
            ScenarioConfig(L=3, K=1, M=2, tau_c=10)
        cfg = ScenarioConfig(L=3, K=1, M=2, tau_c=10,
                             bs_positions=((0, 0), (200, 0), (400, 0)))
        stats = generate_network(cfg)
        assert stats.bs_xy.shape == (3, 2)


class TestConfigValidation:
    @pytest.mark.parametrize("field,value", [
        ("L", 0), ("K", 0), ("M", 0), ("eta", 0.0), ("rho_d", -1.0),
        ("sigma2", 0.0), ("min_bs_distance", 0.0), ("asd_deg", -1.0),
        ("fading_kind", "rician"),
    ])
    def test_invalid_field_raises(self, field, value):
        with pytest.raises(ConfigError):
            ScenarioConfig(**{**dict(L=4, K=2, M=4, tau_c=50), field: value})

    def test_tau_p_must_equal_k(self):
        with pytest.raises(ConfigError):
            ScenarioConfig(L=4, K=2, M=4, tau_c=50, tau_p=3)

    def test_unknown_json_field(self):
        with pytest.raises(ConfigError, match="unknown"):
            ScenarioConfig.from_dict({"L": 4, "K": 2, "M": 4, "tau_c": 50, "bogus": 1})

    def test_roundtrip(self):
        cfg = small_config()
        assert ScenarioConfig.from_dict(cfg.to_dict()) == cfg


class TestSampling:
    def test_pure_los_magnitudes(self):
        rng = np.random.default_rng(3)
        gbar = rng.standard_normal((2, 1, 2, 4)) + 1j * rng.standard_normal((2, 1, 2, 4))
        stats = manual_stats(gbar, np.zeros((2, 1, 2, 4, 4), dtype=complex))
        real = sample_channels(stats, np.random.default_rng(4))
        np.testing.assert_allclose(np.abs(real.g), np.abs(gbar), rtol=1e-12)

    def test_indefinite_covariance_raises(self):
        R = -np.eye(3)[None, None, None].astype(complex)
        stats = manual_stats(np.zeros((1, 1, 1, 3), dtype=complex), R)
        with pytest.raises(StatisticsError):
            covariance_sqrt_factors(stats)

    def test_sample_moments_match_statistics(self):
        # Monte-Carlo oracle: empirical mean -> 0 and second moment -> Rbar,
        # both within 5 standard errors at 1e5 draws
        rng = np.random.default_rng(5)
        gbar = rng.standard_normal((1, 1, 1, 3)) + 1j * rng.standard_normal((1, 1, 1, 3))
        A = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
        R = (A @ A.conj().T)[None, None, None]
        stats = manual_stats(gbar, R)
        factors = covariance_sqrt_factors(stats)
        n = 100_000
        g, _ = _sample_batch(stats, factors, np.random.default_rng(6), n)
        g = g[:, 0, 0, 0, :]

        mean = g.mean(axis=0)
        var = np.diagonal(stats.Rbar[0, 0, 0]).real
        assert np.all(np.abs(mean) <= 5 * np.sqrt(var / n))

        second = g[:, :, None] * g[:, None, :].conj()
        est = second.mean(axis=0)
        se = np.sqrt(2.0 * np.outer(var, var) / n)
        assert np.all(np.abs(est - stats.Rbar[0, 0, 0]) <= 5 * se)

    def test_batch_matches_single_draw_layout(self):
        stats = generate_network(small_config())
        real = sample_channels(stats, np.random.default_rng(0))
        assert real.g.shape == stats.gbar.shape
        assert real.theta.shape == (stats.L, stats.K, stats.L)
        assert np.all((real.theta >= 0) & (real.theta < 2 * np.pi))
