"""Estimators and hypothesis checks for the limit-theorem experiments.

Three Hurst estimators (Haar-wavelet log-variance regression, detrended
fluctuation analysis, rescaled range), sup-norm path distances, log-log
convergence-rate fits, and Kolmogorov-Smirnov tests used to verify the
Gaussian and Poisson limits.  Everything here is pure and reentrant.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import ValidationError
from .fractional import GridSeries, require_same_grid


@dataclass(frozen=True)
class HurstEstimate:
    """Point estimate with the scale range and regression diagnostics.

    h is reported raw (pathological inputs can push estimators outside
    (0,1); consumers clamp if they need to).  For the wavelet method the
    scales are octaves (j_min, j_max); for dfa/rs they are window sizes.
    """

    h: float
    scales: tuple
    slope_stderr: float
    method: str

    def to_csv_row(self, n):
        return (f"method,h,stderr,j_min,j_max,n\n"
                f"{self.method},{self.h!r},{self.slope_stderr!r},"
                f"{self.scales[0]},{self.scales[1]},{n}\n")


def _series_values(series):
    return series.values if isinstance(series, GridSeries) else np.asarray(series, float)


def _weighted_slope(x, y, w):
    """Weighted least-squares slope and its standard error."""
    w = np.asarray(w, float)
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    wsum = w.sum()
    xbar = (w * x).sum() / wsum
    ybar = (w * y).sum() / wsum
    sxx = (w * (x - xbar) ** 2).sum()
    slope = (w * (x - xbar) * (y - ybar)).sum() / sxx
    intercept = ybar - slope * xbar
    dof = max(len(x) - 2, 1)
    resid = y - intercept - slope * x
    s2 = (w * resid ** 2).sum() / dof * len(x) / wsum
    return slope, math.sqrt(max(s2 / sxx, 0.0))


def haar_detail_variances(increments, j_max):
    """Haar detail-coefficient variance and count per octave 1..j_max."""
    a = np.asarray(increments, float)
    n = 2 ** int(math.floor(math.log2(len(a))))
    a = a[:n]
    variances, counts = [], []
    for _ in range(j_max):
        d = (a[0::2] - a[1::2]) / math.sqrt(2.0)
        a = (a[0::2] + a[1::2]) / math.sqrt(2.0)
        variances.append(np.mean(d * d))
        counts.append(len(d))
        if len(a) < 2:
            break
    return np.array(variances), np.array(counts)


def hurst_wavelet(series, j_min=None, j_max=None):
    """Wavelet Hurst estimator on the increments of a path.

    Haar detail variances per octave scale like 2^(j(2H-1)) for the
    increments of an H-self-similar path, so the weighted least-squares
    slope of log2(variance) against octave j gives H = (slope+1)/2.
    Weights are the per-octave coefficient counts.  The default octave
    range [3, log2(n)-4] trims boundary-contaminated coarse scales and
    the noisiest fine ones.
    """
    x = _series_values(series)
    n_total = len(x)
    logn = int(math.floor(math.log2(max(n_total - 1, 2))))
    if j_max is None:
        j_max = logn - 4
    if j_min is None:
        j_min = 3
    if not 1 <= j_min < j_max:
        raise ValidationError(f"need 1 <= j_min < j_max, got [{j_min}, {j_max}]")
    if n_total < 2 ** (j_max + 2):
        raise ValidationError(
            f"series of length {n_total} is too short for octave {j_max} "
            f"(need at least {2 ** (j_max + 2)} points)")
    variances, counts = haar_detail_variances(np.diff(x), j_max)
    if np.any(variances[j_min - 1:j_max] <= 0.0):
        raise ValidationError("degenerate series: zero detail variance in range")
    j = np.arange(j_min, j_max + 1)
    v = variances[j_min - 1:j_max]
    n_j = counts[j_min - 1:j_max]
    # log2 of a chi-square variance estimate is biased low by
    # (psi(n/2) - ln(n/2))/ln 2, badly so at the coarse octaves where only
    # a handful of coefficients survive; subtract the exact correction and
    # weight by the inverse of the exact log-variance (trigamma)
    bias = (special.digamma(n_j / 2.0) - np.log(n_j / 2.0)) / math.log(2.0)
    # regress on variance ratios, not raw log-variances: the slope is the
    # same but pure rescalings of the path then cancel exactly
    y = np.log2(v / v[0]) - (bias - bias[0])
    weights = 1.0 / special.polygamma(1, n_j / 2.0)
    slope, stderr = _weighted_slope(j, y, weights)
    return HurstEstimate(h=(slope + 1.0) / 2.0, scales=(int(j_min), int(j_max)),
                         slope_stderr=stderr / 2.0, method="wavelet")


def _dyadic_windows(n, w_min, w_max):
    w_max = min(w_max, n // 4)
    sizes = []
    w = w_min
    while w <= w_max:
        sizes.append(w)
        w *= 2
    if len(sizes) < 3:
        raise ValidationError(
            f"series too short for window range [{w_min}, {w_max}]")
    return sizes


def hurst_dfa(series, w_min=16, w_max=None):
    """Detrended fluctuation analysis of a path.

    The path's increments form the noise; their mean-centered cumulative sum
    is split into windows of dyadic sizes, a linear trend is removed per
    window, and the RMS residual F(w) scales like w^H.
    """
    x = _series_values(series)
    noise = np.diff(x)
    n = len(noise)
    if w_max is None:
        w_max = n // 4
    sizes = _dyadic_windows(n, w_min, w_max)
    profile = np.cumsum(noise - noise.mean())
    fluct = []
    for w in sizes:
        m = n // w
        blocks = profile[:m * w].reshape(m, w)
        t = np.arange(w, dtype=float)
        tc = t - t.mean()
        denom = (tc * tc).sum()
        slope = (blocks * tc).sum(axis=1) / denom
        inter = blocks.mean(axis=1)
        resid = blocks - inter[:, None] - slope[:, None] * tc
        fluct.append(np.sqrt(np.mean(resid * resid)))
    fluct = np.array(fluct)
    if np.any(fluct <= 0.0):
        raise ValidationError("degenerate series: zero fluctuation at some scale")
    slope, stderr = _weighted_slope(np.log2(sizes), np.log2(fluct), np.ones(len(sizes)))
    return HurstEstimate(h=slope, scales=(sizes[0], sizes[-1]),
                         slope_stderr=stderr, method="dfa")


def hurst_rs(series, w_min=16, w_max=None):
    """Rescaled-range (R/S) analysis of a path.

    For each dyadic window size the increments are split into blocks; the
    range of cumulative deviations from the block mean over the block
    standard deviation averages to roughly c * w^H.
    """
    x = _series_values(series)
    noise = np.diff(x)
    n = len(noise)
    if w_max is None:
        w_max = n // 4
    sizes = _dyadic_windows(n, w_min, w_max)
    rs = []
    for w in sizes:
        m = n // w
        blocks = noise[:m * w].reshape(m, w)
        dev = blocks - blocks.mean(axis=1, keepdims=True)
        z = np.cumsum(dev, axis=1)
        rng_ = z.max(axis=1) - z.min(axis=1)
        std = blocks.std(axis=1)
        ok = std > 0
        if not np.any(ok):
            raise ValidationError("degenerate series: zero variance in every block")
        rs.append(np.mean(rng_[ok] / std[ok]))
    rs = np.array(rs)
    if np.any(rs <= 0.0):
        raise ValidationError("degenerate series: zero rescaled range")
    slope, stderr = _weighted_slope(np.log2(sizes), np.log2(rs), np.ones(len(sizes)))
    return HurstEstimate(h=slope, scales=(sizes[0], sizes[-1]),
                         slope_stderr=stderr, method="rescaled_range")


def sup_error(a, b):
    """Uniform distance max_k |a_k - b_k| between two equal-grid series."""
    require_same_grid(a, b)
    return float(np.max(np.abs(a.values - b.values)))


def convergence_slope(sizes, errors):
    """OLS slope (and stderr) of log(error) against log(size)."""
    sizes = np.asarray(sizes, float)
    errors = np.asarray(errors, float)
    if len(sizes) < 3 or len(sizes) != len(errors):
        raise ValidationError("need at least 3 (size, error) pairs")
    if np.any(sizes <= 0.0) or np.any(errors <= 0.0):
        raise ValidationError("sizes and errors must be positive")
    return _weighted_slope(np.log(sizes), np.log(errors), np.ones(len(sizes)))


def _kolmogorov_sf(x, terms=100):
    """Asymptotic Kolmogorov survival function, series truncated at `terms`."""
    if x <= 0.0:
        return 1.0
    k = np.arange(1, terms + 1)
    return float(min(1.0, max(0.0, 2.0 * np.sum((-1.0) ** (k - 1) * np.exp(-2.0 * k * k * x * x)))))


def ks_normal(samples, mean, var):
    """One-sample Kolmogorov-Smirnov p-value against Normal(mean, var)."""
    samples = np.sort(np.asarray(samples, float))
    n = len(samples)
    if n < 100:
        raise ValidationError(f"need at least 100 samples, got {n}")
    if not var > 0.0:
        raise ValidationError("variance must be positive")
    cdf = 0.5 * (1.0 + special.erf((samples - mean) / math.sqrt(2.0 * var)))
    i = np.arange(1, n + 1)
    d = max(np.max(i / n - cdf), np.max(cdf - (i - 1) / n))
    return _kolmogorov_sf(math.sqrt(n) * d)


def ks_two_sample(a, b):
    """Two-sample Kolmogorov-Smirnov p-value (asymptotic)."""
    a = np.sort(np.asarray(a, float))
    b = np.sort(np.asarray(b, float))
    n, m = len(a), len(b)
    if min(n, m) < 100:
        raise ValidationError("need at least 100 samples per side")
    both = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, both, side="right") / n
    cdf_b = np.searchsorted(b, both, side="right") / m
    d = np.max(np.abs(cdf_a - cdf_b))
    en = math.sqrt(n * m / (n + m))
    return _kolmogorov_sf(en * d)


def poisson_clt_check(t_large, n_samples, rng):
    """KS p-value of (Pi(t) - t)/sqrt(t) against the standard normal.

    The observable consequence of the strong pathwise coupling between a
    unit-rate Poisson process and Brownian motion: at large t the centered,
    diffusively scaled count is Gaussian.  Small t fails on skewness, which
    is why t >= 1e3 is required.
    """
    if t_large < 1e3:
        raise ValidationError("t_large must be at least 1e3")
    counts = rng.poisson(t_large, size=n_samples)
    z = (counts - t_large) / math.sqrt(t_large)
    return ks_normal(z, 0.0, 1.0)
