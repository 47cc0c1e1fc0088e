"""Fractional Brownian motion and pathwise calculus against it.

Provides the covariance kernel, an exact Gaussian sampler on uniform grids
(circulant embedding of the increment autocovariance, with a Cholesky
fallback), left-endpoint Stieltjes integration for integrators of zero
quadratic variation (Hurst index above 1/2), an explicit Euler solver for
the fractional Ornstein-Uhlenbeck recursion, and generic sampling of
centered Gaussian vectors from an arbitrary covariance matrix.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ValidationError

_CHOLESKY_MAX_N = 2 ** 14
_EMBED_EIG_TOL = -1e-9


@dataclass(frozen=True)
class GridSeries:
    """Real-valued series on a uniform time grid starting at t=0.

    description is a free-form role tag (price, fluid, fluctuation,
    integrand, ...) carried through for CSV export and debugging.
    """

    grid_step: float
    values: np.ndarray
    description: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if not self.grid_step > 0:
            raise ValidationError("grid_step must be positive")
        if v.ndim != 1 or v.size == 0:
            raise ValidationError("values must be a nonempty 1-d sequence")

    def __len__(self):
        return len(self.values)

    @property
    def times(self):
        return self.grid_step * np.arange(len(self.values))

    @property
    def horizon(self):
        return self.grid_step * (len(self.values) - 1)

    def with_values(self, values, description=None):
        return GridSeries(self.grid_step, values,
                          self.description if description is None else description)

    def value_at(self, t):
        """Value at grid time t (nearest grid point within half a step)."""
        k = int(round(t / self.grid_step))
        if not 0 <= k < len(self.values) or abs(k * self.grid_step - t) > self.grid_step / 2:
            raise ValidationError(f"time {t} is not on the grid")
        return float(self.values[k])


def same_grid(a, b):
    """Check two series share a grid (same step within 1e-12, same length)."""
    if len(a.values) != len(b.values):
        return False
    return abs(a.grid_step - b.grid_step) <= 1e-12 * max(a.grid_step, b.grid_step)


def require_same_grid(a, b, what="series"):
    if not same_grid(a, b):
        raise ValidationError(
            f"{what} must share a grid: steps {a.grid_step} vs {b.grid_step}, "
            f"lengths {len(a.values)} vs {len(b.values)}")


@dataclass(frozen=True)
class FbmPath:
    """Fractional Brownian motion sampled on a uniform grid, B_0 = 0."""

    hurst: float
    grid_step: float
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if not 0.0 < self.hurst <= 1.0:
            raise ValidationError(f"Hurst index must lie in (0,1], got {self.hurst}")
        if not self.grid_step > 0:
            raise ValidationError("grid_step must be positive")
        if v.ndim != 1 or len(v) < 2 or v[0] != 0.0:
            raise ValidationError("values must start at 0 and contain >= 2 points")

    @property
    def times(self):
        return self.grid_step * np.arange(len(self.values))

    def increments(self):
        return np.diff(self.values)

    def as_series(self, description="fbm"):
        return GridSeries(self.grid_step, self.values, description)


def fbm_covariance(s, t, hurst):
    """Covariance (|t|^2H + |s|^2H - |t-s|^2H) / 2; broadcasts over arrays."""
    if not 0.0 < hurst <= 1.0:
        raise ValidationError(f"Hurst index must lie in (0,1], got {hurst}")
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    h2 = 2.0 * hurst
    out = 0.5 * (np.abs(t) ** h2 + np.abs(s) ** h2 - np.abs(t - s) ** h2)
    return float(out) if out.ndim == 0 else out


def _fgn_autocov(lags, hurst):
    """Autocovariance of unit-step fractional Gaussian noise."""
    k = np.abs(np.asarray(lags, dtype=float))
    h2 = 2.0 * hurst
    return 0.5 * ((k + 1.0) ** h2 - 2.0 * k ** h2 + np.abs(k - 1.0) ** h2)


def _fgn_circulant(hurst, n, rng):
    """Unit-step fractional Gaussian noise via circulant embedding.

    Returns None when the embedding has an eigenvalue below the tolerance
    (floating-point guard; the fBm embedding is nonnegative in exact
    arithmetic) so the caller can fall back to a dense factorization.
    """
    m = 2 * n
    row = np.concatenate([_fgn_autocov(np.arange(n + 1), hurst),
                          _fgn_autocov(np.arange(n - 1, 0, -1), hurst)])
    lam = np.fft.fft(row).real
    if lam.min() < _EMBED_EIG_TOL:
        return None
    lam = np.clip(lam, 0.0, None)
    z = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    w = np.empty(m, dtype=complex)
    w[0] = np.sqrt(lam[0] / m) * z[0].real
    w[n] = np.sqrt(lam[n] / m) * z[n].real
    k = np.arange(1, n)
    w[k] = np.sqrt(lam[k] / (2.0 * m)) * z[k]
    w[m - k] = np.conj(w[k])
    return np.fft.fft(w).real[:n]


def generate_fbm(hurst, n, horizon, rng):
    """Exact Gaussian fBm sample with n increments on [0, horizon].

    Circulant embedding runs in O(n log n); if the embedding fails the
    floating-point eigenvalue check, falls back (with a warning) to a
    Cholesky factorization of the full grid covariance, which is refused
    above 2**14 points.
    """
    if not 0.0 < hurst <= 1.0:
        raise ValidationError(f"Hurst index must lie in (0,1], got {hurst}")
    if n < 2:
        raise ValidationError("need at least 2 grid increments")
    if not horizon > 0:
        raise ValidationError("horizon must be positive")
    dt = horizon / n
    fgn = _fgn_circulant(hurst, n, rng)
    if fgn is not None:
        values = np.concatenate([[0.0], np.cumsum(fgn) * dt ** hurst])
        return FbmPath(hurst, dt, values)
    if n > _CHOLESKY_MAX_N:
        raise NumericError(
            f"circulant embedding failed for H={hurst} and n={n} exceeds the "
            f"dense-fallback limit {_CHOLESKY_MAX_N}")
    warnings.warn("circulant embedding failed; using dense Cholesky fallback",
                  RuntimeWarning, stacklevel=2)
    t = dt * np.arange(1, n + 1)
    cov = fbm_covariance(t[:, None], t[None, :], hurst)
    chol = np.linalg.cholesky(cov + 1e-12 * dt ** (2 * hurst) * np.eye(n))
    values = np.concatenate([[0.0], chol @ rng.standard_normal(n)])
    return FbmPath(hurst, dt, values)


def stieltjes_integral(psi, integrator):
    """Cumulative left-endpoint Stieltjes sum of psi against the integrator.

    I_k = sum_{j<k} psi_j (Z_{j+1} - Z_j).  For integrators of vanishing
    quadratic variation (fBm with H > 1/2) this converges pathwise under
    grid refinement.
    """
    if isinstance(integrator, FbmPath):
        integrator = integrator.as_series()
    if isinstance(psi, FbmPath):
        psi = psi.as_series()
    require_same_grid(psi, integrator, "integrand and integrator")
    if integrator.values[0] != 0.0:
        raise ValidationError("integrator must start at 0")
    out = np.empty(len(psi.values))
    out[0] = 0.0
    np.cumsum(psi.values[:-1] * np.diff(integrator.values), out=out[1:])
    return GridSeries(psi.grid_step, out, "stieltjes-integral")


def simulate_fou(drift_coeff, diffusion_coeff, sigma, fbm):
    """Explicit Euler recursion for a mean-reverting process driven by fBm.

    Z_{k+1} = Z_k + drift_k Z_k dt + sigma * diffusion_k (B_{k+1} - B_k),
    Z_0 = 0.  Both coefficient series live on the fBm grid.
    """
    path = fbm.as_series() if isinstance(fbm, FbmPath) else fbm
    require_same_grid(drift_coeff, path, "drift coefficient and driver")
    require_same_grid(diffusion_coeff, path, "diffusion coefficient and driver")
    dt = path.grid_step
    db = np.diff(path.values)
    drift = drift_coeff.values
    diff = diffusion_coeff.values
    factors = 1.0 + drift[:-1] * dt
    noise = sigma * diff[:-1] * db
    if np.all(factors > 0.0):
        # closed form of the linear recursion via prefix products,
        # Z_n = A_n sum_{j<n} w_j / A_{j+1}, safe while A stays in range
        log_a = np.concatenate([[0.0], np.cumsum(np.log(factors))])
        if np.abs(log_a).max() < 500.0:
            a = np.exp(log_a)
            z = a * np.concatenate([[0.0], np.cumsum(noise / a[1:])])
            return GridSeries(dt, z, "fractional-ou")
    z = np.empty(len(path.values))
    z[0] = 0.0
    for k in range(len(db)):
        z[k + 1] = factors[k] * z[k] + noise[k]
    return GridSeries(dt, z, "fractional-ou")


def gaussian_from_cov(cov, rng, grid_step=1.0, description="gaussian"):
    """Centered Gaussian vector with the given covariance, as a GridSeries.

    Mildly indefinite matrices (a floating-point artifact of estimated
    covariances) are repaired by clipping negative eigenvalues at zero;
    matrices with an eigenvalue below -1e-6 * trace are rejected.
    """
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValidationError("covariance must be a square matrix")
    if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-10 * (1.0 + np.abs(cov).max())):
        raise ValidationError("covariance must be symmetric")
    cov = 0.5 * (cov + cov.T)
    n = cov.shape[0]
    root = covariance_root(cov)
    return GridSeries(grid_step, root @ rng.standard_normal(n), description)


def covariance_root(cov):
    """Square factor R with R R^T = cov (possibly after clipping tiny
    negative eigenvalues).  Factor once when drawing many vectors from the
    same covariance."""
    cov = np.asarray(cov, dtype=float)
    n = cov.shape[0]
    if not cov.any():
        return np.zeros((n, n))
    scale = max(np.trace(cov), 0.0)
    shifts = [0.0]
    if scale > 0.0:
        shifts.append(1e-10 * scale / n)
    for shift in shifts:
        try:
            return np.linalg.cholesky(cov + shift * np.eye(n))
        except np.linalg.LinAlgError:
            continue
    eigval, eigvec = np.linalg.eigh(cov)
    if eigval.min() < -1e-6 * max(scale, 1e-300):
        raise ValidationError(
            f"covariance is strongly indefinite (min eigenvalue {eigval.min():.3e})")
    return eigvec * np.sqrt(np.clip(eigval, 0.0, None))


def write_csv(path_or_series, fname):
    """Write (time, value) rows with 17 significant digits.

    That many digits make the decimal text round-trip to the identical
    float64, so re-imported series compare bit-equal.
    """
    if isinstance(path_or_series, FbmPath):
        series = path_or_series.as_series()
    else:
        series = path_or_series
    with open(fname, "w") as fh:
        fh.write("time,value\n")
        for t, v in zip(series.times, series.values):
            fh.write(f"{t:.17g},{v:.17g}\n")


def read_csv(fname, description=""):
    """Re-import a two-column (time, value) CSV written by write_csv."""
    data = np.genfromtxt(fname, delimiter=",", skip_header=1)
    if data.ndim != 2 or data.shape[1] != 2 or data.shape[0] < 2:
        raise ValidationError(f"{fname} is not a two-column series CSV")
    steps = np.diff(data[:, 0])
    if np.max(np.abs(steps - steps[0])) > 1e-9 * max(steps[0], 1e-300):
        raise ValidationError(f"{fname} does not have a uniform time grid")
    return GridSeries(float(steps[0]), data[:, 1], description)
