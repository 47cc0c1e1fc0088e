"""Fractional Brownian motion, Stieltjes calculus and Gaussian sampling."""

import numpy as np
import pytest

from inertsim import fractional as fr
from inertsim import stats as st
from inertsim.errors import NumericError, ValidationError


class TestCovariance:
    def test_point_values(self):
        assert fr.fbm_covariance(1.0, 1.0, 0.3) == pytest.approx(1.0, abs=1e-14)
        assert fr.fbm_covariance(1.0, 2.0, 0.75) == pytest.approx(np.sqrt(2.0), rel=1e-12)
        # whenever t = 2s the s-terms cancel and the covariance is t^2H / 2
        assert fr.fbm_covariance(0.5, 1.0, 0.75) == pytest.approx(0.5, abs=1e-14)

    def test_brownian_case_is_min(self, rng):
        s = rng.random(50)
        t = rng.random(50)
        np.testing.assert_allclose(fr.fbm_covariance(s, t, 0.5),
                                   np.minimum(s, t), atol=1e-12)

    def test_domain_error(self):
        for bad in (0.0, -0.1, 1.2):
            with pytest.raises(ValidationError):
                fr.fbm_covariance(1.0, 1.0, bad)

    @pytest.mark.parametrize("hurst", [0.2, 0.5, 0.75, 1.0])
    def test_positive_semidefinite_on_random_grids(self, hurst, rng):
        for _ in range(5):
            t = np.sort(rng.random(64)) * 3.0
            cov = fr.fbm_covariance(t[:, None], t[None, :], hurst)
            assert np.linalg.eigvalsh(cov).min() >= -1e-8


class TestGenerateFbm:
    def test_brownian_increments_uncorrelated(self):
        p = fr.generate_fbm(0.5, 2 ** 16, 1.0, np.random.default_rng(1))
        inc = p.increments()
        r1 = np.corrcoef(inc[:-1], inc[1:])[0, 1]
        assert abs(r1) < 0.01

    def test_terminal_variance(self):
        rng = np.random.default_rng(2)
        finals = np.array([fr.generate_fbm(0.75, 128, 1.0, rng).values[-1]
                           for _ in range(10_000)])
        assert finals.var() == pytest.approx(1.0, abs=0.03)

    def test_midpoint_covariance(self):
        rng = np.random.default_rng(3)
        paths = np.array([fr.generate_fbm(0.75, 128, 1.0, rng).values
                          for _ in range(10_000)])
        got = np.mean(paths[:, 64] * paths[:, -1])
        assert got == pytest.approx(fr.fbm_covariance(0.5, 1.0, 0.75), abs=0.03)

    @pytest.mark.parametrize("hurst", [0.6, 0.9])
    def test_stationary_increments(self, hurst):
        rng = np.random.default_rng(4)
        paths = np.array([fr.generate_fbm(hurst, 256, 1.0, rng).values
                          for _ in range(8_000)])
        h = 32  # lag in grid cells = 1/8 in time
        for start in (0, 96, 192):
            v = np.var(paths[:, start + h] - paths[:, start])
            assert v == pytest.approx((h / 256.0) ** (2 * hurst), rel=0.05)

    def test_self_similarity(self):
        rng = np.random.default_rng(5)
        hurst = 0.75
        paths = np.array([fr.generate_fbm(hurst, 256, 1.0, rng).values
                          for _ in range(8_000)])
        c = 4.0
        v_t = np.var(paths[:, 32])   # t = 1/8
        v_ct = np.var(paths[:, 128])  # ct = 1/2
        assert v_ct / v_t == pytest.approx(c ** (2 * hurst), rel=0.05)

    def test_validation(self, rng):
        with pytest.raises(ValidationError):
            fr.generate_fbm(1.5, 64, 1.0, rng)
        with pytest.raises(ValidationError):
            fr.generate_fbm(0.5, 1, 1.0, rng)
        with pytest.raises(ValidationError):
            fr.generate_fbm(0.5, 64, 0.0, rng)


class TestStieltjesIntegral:
    def test_unit_integrand_recovers_integrator(self, rng):
        z = fr.generate_fbm(0.75, 1024, 1.0, rng)
        ones = fr.GridSeries(z.grid_step, np.ones(len(z.values)))
        out = fr.stieltjes_integral(ones, z)
        np.testing.assert_allclose(out.values, z.values, atol=1e-14)

    def test_chain_rule_under_refinement(self):
        # int B dB -> B_1^2 / 2 pathwise for H > 1/2: the left-sum error is
        # half the quadratic variation, which vanishes under refinement
        for seed in (11, 12, 13):
            fine = fr.generate_fbm(0.75, 2 ** 15, 1.0, np.random.default_rng(seed))
            errors = []
            for level in range(5):
                step = 2 ** (4 - level)
                vals = fine.values[::step]
                sub = fr.GridSeries(fine.grid_step * step, vals)
                val = fr.stieltjes_integral(sub, sub).values[-1]
                errors.append(abs(val - 0.5 * vals[-1] ** 2))
            assert all(a > b for a, b in zip(errors, errors[1:]))

    def test_deterministic_riemann_sum(self):
        # integrand steps 1 -> 2 at t = 1/2, integrator is the ramp t
        n = 1000
        t = np.arange(n + 1) / n
        psi = fr.GridSeries(1.0 / n, np.where(t < 0.5, 1.0, 2.0))
        ramp = fr.GridSeries(1.0 / n, t)
        out = fr.stieltjes_integral(psi, ramp)
        assert out.values[-1] == pytest.approx(1.5, abs=1e-12)

    def test_linearity_and_interval_additivity(self, rng):
        z = fr.generate_fbm(0.75, 512, 1.0, rng)
        a = fr.GridSeries(z.grid_step, rng.standard_normal(513))
        b = fr.GridSeries(z.grid_step, rng.standard_normal(513))
        lhs = fr.stieltjes_integral(
            fr.GridSeries(z.grid_step, 2.0 * a.values - 3.0 * b.values), z)
        rhs = (2.0 * fr.stieltjes_integral(a, z).values
               - 3.0 * fr.stieltjes_integral(b, z).values)
        np.testing.assert_allclose(lhs.values, rhs, atol=1e-12)
        # additivity: I_k2 - I_k1 is the integral over [t_k1, t_k2]
        full = fr.stieltjes_integral(a, z).values
        k1, k2 = 100, 300
        shifted = fr.stieltjes_integral(
            fr.GridSeries(z.grid_step, a.values[k1:]),
            fr.GridSeries(z.grid_step, z.values[k1:] - z.values[k1]))
        assert full[k2] - full[k1] == pytest.approx(shifted.values[k2 - k1], abs=1e-12)

    def test_grid_mismatch_rejected(self, rng):
        z = fr.generate_fbm(0.75, 64, 1.0, rng)
        with pytest.raises(ValidationError):
            fr.stieltjes_integral(fr.GridSeries(1.0 / 32, np.ones(33)), z)

    def test_integrator_must_start_at_zero(self):
        with pytest.raises(ValidationError):
            fr.stieltjes_integral(fr.GridSeries(0.1, np.ones(11)),
                                  fr.GridSeries(0.1, np.ones(11)))


class TestSimulateFou:
    def test_zero_drift_reproduces_driver(self, rng):
        z = fr.generate_fbm(0.75, 512, 1.0, rng)
        n = len(z.values)
        out = fr.simulate_fou(fr.GridSeries(z.grid_step, np.zeros(n)),
                              fr.GridSeries(z.grid_step, np.ones(n)), 1.0, z)
        np.testing.assert_allclose(out.values, z.values, atol=1e-12)

    def test_zero_sigma_is_zero(self, rng):
        z = fr.generate_fbm(0.75, 256, 1.0, rng)
        n = len(z.values)
        out = fr.simulate_fou(fr.GridSeries(z.grid_step, -np.ones(n)),
                              fr.GridSeries(z.grid_step, np.ones(n)), 0.0, z)
        assert np.all(out.values == 0.0)

    def test_variance_against_quadrature_oracle(self):
        # Var Z_1 for constant mean reversion k equals the double sum of
        # exp(-k(1-u)) exp(-k(1-v)) against the fBm increment covariance
        k, hurst, n = 2.0, 0.75, 512
        t = np.arange(n + 1) / n
        c = fr.fbm_covariance
        dcov = (c(t[1:, None], t[None, 1:], hurst)
                - c(t[1:, None], t[None, :-1], hurst)
                - c(t[:-1, None], t[None, 1:], hurst)
                + c(t[:-1, None], t[None, :-1], hurst))
        w = np.exp(-k * (1.0 - t[:-1]))
        oracle = float(w @ dcov @ w)
        rng = np.random.default_rng(21)
        drift = fr.GridSeries(1.0 / n, np.full(n + 1, -k))
        diff = fr.GridSeries(1.0 / n, np.ones(n + 1))
        finals = np.array([
            fr.simulate_fou(drift, diff, 1.0,
                            fr.generate_fbm(hurst, n, 1.0, rng)).values[-1]
            for _ in range(10_000)])
        assert finals.var() == pytest.approx(oracle, rel=0.05)

    def test_brownian_case_reaches_ou_stationary_variance(self):
        # H = 1/2 driver over a long horizon: Var -> sigma^2 / (2k)
        k, sigma, n, horizon = 2.0, 1.5, 2048, 4.0
        rng = np.random.default_rng(22)
        drift = fr.GridSeries(horizon / n, np.full(n + 1, -k))
        diff = fr.GridSeries(horizon / n, np.ones(n + 1))
        finals = np.array([
            fr.simulate_fou(drift, diff, sigma,
                            fr.generate_fbm(0.5, n, horizon, rng)).values[-1]
            for _ in range(10_000)])
        assert finals.var() == pytest.approx(sigma ** 2 / (2 * k), rel=0.05)

    def test_grid_mismatch_rejected(self, rng):
        z = fr.generate_fbm(0.75, 64, 1.0, rng)
        with pytest.raises(ValidationError):
            fr.simulate_fou(fr.GridSeries(0.5, np.zeros(3)),
                            fr.GridSeries(z.grid_step, np.ones(65)), 1.0, z)


class TestGaussianFromCov:
    def test_identity(self):
        rng = np.random.default_rng(31)
        draws = np.concatenate([fr.gaussian_from_cov(np.eye(4), rng).values
                                for _ in range(250_000)])
        assert abs(draws.mean()) < 0.01
        assert draws.var() == pytest.approx(1.0, abs=0.02)

    def test_zero_matrix_gives_zero_path(self, rng):
        out = fr.gaussian_from_cov(np.zeros((6, 6)), rng)
        assert np.all(out.values == 0.0)

    def test_fbm_grid_consistency_with_generator(self):
        # sampling from the covariance matrix must agree in law with the
        # circulant generator: two-sample KS on the terminal marginal
        hurst, n = 0.75, 8
        t = np.arange(1, n + 1) / n
        cov = fr.fbm_covariance(t[:, None], t[None, :], hurst)
        rng = np.random.default_rng(32)
        a = np.array([fr.gaussian_from_cov(cov, rng).values[-1]
                      for _ in range(10_000)])
        b = np.array([fr.generate_fbm(hurst, n, 1.0, rng).values[-1]
                      for _ in range(10_000)])
        assert st.ks_two_sample(a, b) > 0.01

    def test_strongly_indefinite_rejected(self, rng):
        with pytest.raises(ValidationError):
            fr.gaussian_from_cov(np.array([[0.0, 1.0], [1.0, 0.0]]), rng)

    def test_asymmetric_rejected(self, rng):
        with pytest.raises(ValidationError):
            fr.gaussian_from_cov(np.array([[1.0, 0.5], [0.1, 1.0]]), rng)


class TestCsv:
    def test_bit_stable_round_trip(self, rng, tmp_path):
        p = fr.generate_fbm(0.7, 200, 1.0, rng)
        fname = tmp_path / "series.csv"
        fr.write_csv(p, fname)
        back = fr.read_csv(fname)
        np.testing.assert_array_equal(back.values, p.values)
        assert back.grid_step == p.grid_step

    def test_17_digit_format(self, tmp_path):
        s = fr.GridSeries(0.1, np.array([0.0, 1.0 / 3.0]))
        fname = tmp_path / "s.csv"
        fr.write_csv(s, fname)
        lines = fname.read_text().splitlines()
        assert lines[0] == "time,value"
        assert lines[1] == "0,0"
        assert float(lines[2].split(",")[1]) == 1.0 / 3.0
