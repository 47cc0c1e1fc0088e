"""Hurst estimators, distances and distributional checks."""

import numpy as np
import pytest

from inertsim import fractional as fr
from inertsim import stats as st
from inertsim.errors import ValidationError


def fbm_series(hurst, n, seed):
    return fr.generate_fbm(hurst, n, 1.0, np.random.default_rng(seed)).as_series()


class TestHurstWavelet:
    def test_high_memory_path(self):
        est = st.hurst_wavelet(fbm_series(0.8, 2 ** 16, 1))
        assert 0.72 <= est.h <= 0.88
        assert est.method == "wavelet"
        assert est.slope_stderr >= 0.0

    def test_brownian_path(self):
        est = st.hurst_wavelet(fbm_series(0.5, 2 ** 16, 2))
        assert 0.45 <= est.h <= 0.55

    def test_white_noise_increments(self):
        rng = np.random.default_rng(3)
        path = np.concatenate([[0.0], np.cumsum(rng.standard_normal(2 ** 16))])
        est = st.hurst_wavelet(fr.GridSeries(1.0, path))
        assert est.h == pytest.approx(0.5, abs=0.05)

    def test_too_short_rejected(self):
        with pytest.raises(ValidationError):
            st.hurst_wavelet(fbm_series(0.7, 64, 4), j_min=3, j_max=8)

    def test_power_of_two_scaling_is_exactly_invariant(self):
        s = fbm_series(0.75, 2 ** 14, 5)
        a = st.hurst_wavelet(s).h
        b = st.hurst_wavelet(fr.GridSeries(s.grid_step, 4.0 * s.values)).h
        assert a == b

    def test_general_affine_invariance(self):
        s = fbm_series(0.75, 2 ** 14, 6)
        a = st.hurst_wavelet(s).h
        b = st.hurst_wavelet(fr.GridSeries(s.grid_step, 1.7 * s.values - 3.0)).h
        assert a == pytest.approx(b, abs=1e-9)

    def test_degenerate_series_rejected(self):
        with pytest.raises(ValidationError):
            st.hurst_wavelet(fr.GridSeries(1.0, np.zeros(4096)))


class TestEstimateExport:
    def test_single_row_csv(self):
        est = st.HurstEstimate(h=0.75, scales=(3, 9), slope_stderr=0.02,
                               method="wavelet")
        text = est.to_csv_row(4097)
        header, row = text.splitlines()
        assert header == "method,h,stderr,j_min,j_max,n"
        fields = row.split(",")
        assert fields[0] == "wavelet"
        assert float(fields[1]) == 0.75
        assert fields[3:] == ["3", "9", "4097"]


class TestHurstDfaAndRs:
    def test_fractional_path_ranges(self):
        s = fbm_series(0.75, 2 ** 16, 7)
        assert 0.65 <= st.hurst_dfa(s).h <= 0.85
        assert 0.65 <= st.hurst_rs(s).h <= 0.85

    def test_brownian_ranges(self):
        s = fbm_series(0.5, 2 ** 16, 8)
        assert 0.42 <= st.hurst_dfa(s).h <= 0.58
        assert 0.42 <= st.hurst_rs(s).h <= 0.58

    def test_constant_series_rejected(self):
        flat = fr.GridSeries(1.0, np.full(2 ** 12, 3.0))
        with pytest.raises(ValidationError):
            st.hurst_dfa(flat)
        with pytest.raises(ValidationError):
            st.hurst_rs(flat)

    @pytest.mark.parametrize("hurst", [0.6, 0.75, 0.9])
    def test_three_estimators_agree(self, hurst):
        rng_seed = int(hurst * 1000)
        w, d, r = [], [], []
        for k in range(50):
            s = fbm_series(hurst, 2 ** 16, rng_seed + k)
            w.append(st.hurst_wavelet(s).h)
            d.append(st.hurst_dfa(s).h)
            r.append(st.hurst_rs(s).h)
        meds = [np.median(w), np.median(d), np.median(r)]
        assert max(meds) - min(meds) < 0.1


class TestSupError:
    def test_identical(self):
        a = fr.GridSeries(1e-3, np.arange(0.0, 1.0001, 1e-3))
        assert st.sup_error(a, a) == 0.0

    def test_constant_offset(self):
        a = fr.GridSeries(1e-3, np.arange(0.0, 1.0001, 1e-3))
        b = fr.GridSeries(1e-3, a.values + 0.3)
        assert st.sup_error(a, b) == pytest.approx(0.3, abs=1e-12)

    def test_parabola_gap(self):
        t = np.arange(0.0, 1.0001, 1e-3)
        a = fr.GridSeries(1e-3, t)
        b = fr.GridSeries(1e-3, t ** 2)
        assert st.sup_error(a, b) == pytest.approx(0.25, abs=1e-3)

    def test_metric_properties(self, rng):
        x = fr.GridSeries(0.1, rng.standard_normal(64))
        y = fr.GridSeries(0.1, rng.standard_normal(64))
        z = fr.GridSeries(0.1, rng.standard_normal(64))
        assert st.sup_error(x, y) == st.sup_error(y, x)
        assert st.sup_error(x, z) <= st.sup_error(x, y) + st.sup_error(y, z)
        assert st.sup_error(x, y) > 0.0

    def test_grid_mismatch(self):
        with pytest.raises(ValidationError):
            st.sup_error(fr.GridSeries(0.1, np.zeros(5)),
                         fr.GridSeries(0.2, np.zeros(5)))


class TestConvergenceSlope:
    def test_exact_square_root_law(self):
        sizes = [100, 400, 1600, 6400]
        errors = [10.0 / np.sqrt(n) for n in sizes]
        slope, stderr = st.convergence_slope(sizes, errors)
        assert slope == pytest.approx(-0.5, abs=1e-12)
        assert stderr == pytest.approx(0.0, abs=1e-10)

    def test_flat_errors(self):
        slope, _ = st.convergence_slope([10, 100, 1000], [2.0, 2.0, 2.0])
        assert slope == pytest.approx(0.0, abs=1e-12)

    def test_rejects_bad_input(self):
        with pytest.raises(ValidationError):
            st.convergence_slope([10, 100], [1.0, 0.5])
        with pytest.raises(ValidationError):
            st.convergence_slope([10, 100, 1000], [1.0, 0.0, 0.5])


class TestKsTests:
    def test_calibration_at_one_percent(self):
        # the p-value under the null is uniform, so a 1% test rejects
        # about 1% of the time
        rng = np.random.default_rng(41)
        rejections = sum(st.ks_normal(rng.standard_normal(10_000), 0.0, 1.0) < 0.01
                         for _ in range(500))
        assert 1 <= rejections <= 13

    def test_shifted_sample_rejected(self):
        rng = np.random.default_rng(42)
        p = st.ks_normal(rng.standard_normal(1000) + 3.0, 0.0, 1.0)
        assert p < 1e-6

    def test_input_validation(self, rng):
        with pytest.raises(ValidationError):
            st.ks_normal(rng.standard_normal(50), 0.0, 1.0)
        with pytest.raises(ValidationError):
            st.ks_normal(rng.standard_normal(200), 0.0, 0.0)

    def test_two_sample_behaviour(self):
        rng = np.random.default_rng(43)
        same = st.ks_two_sample(rng.standard_normal(2000), rng.standard_normal(2000))
        shifted = st.ks_two_sample(rng.standard_normal(2000),
                                   rng.standard_normal(2000) + 0.5)
        assert same > 0.01
        assert shifted < 1e-10

    def test_two_sample_against_scipy(self):
        from scipy import stats as sps
        rng = np.random.default_rng(44)
        a, b = rng.standard_normal(500), rng.standard_normal(700) * 1.1
        ours = st.ks_two_sample(a, b)
        ref = sps.ks_2samp(a, b, method="asymp").pvalue
        assert ours == pytest.approx(ref, abs=0.02)


class TestPoissonClt:
    def test_large_t_is_gaussian(self):
        p = st.poisson_clt_check(1e4, 10_000, np.random.default_rng(51))
        assert p > 0.01

    def test_mean_matches_rate(self):
        rng = np.random.default_rng(52)
        counts = rng.poisson(1e4, size=10_000)
        assert np.mean(counts / 1e4) == pytest.approx(1.0, abs=0.02)

    def test_small_t_refused(self, rng):
        with pytest.raises(ValidationError):
            st.poisson_clt_check(10.0, 1000, rng)
