"""Simulation of price formation by inert investors and its limit objects.

Modules:
  semi_markov — heavy-tailed mood processes (specs, sampling, occupation law)
  fractional  — fBm generation, Stieltjes integrals, fractional OU, Gaussian
                sampling from covariances
  market      — no-feedback and feedback price models, fluid ODE limit,
                second-order Gaussian limit, rescaled fractional limits
  stats       — Hurst estimators (wavelet, DFA, R/S), KS tests, convergence
                diagnostics
  experiments — config-driven experiment runners emitting CSV + manifest
  cli         — `inertsim run|validate|version`
"""

__version__ = "0.1.0"

from .errors import NumericError, ValidationError
from .fractional import (FbmPath, GridSeries, fbm_covariance, gaussian_from_cov,
                         generate_fbm, simulate_fou, stieltjes_integral)
from .market import (FluidSolution, MarketConfig, PricePath, RateSpec,
                     ScalarFunction, gamma_cov, mean_rates, process_X,
                     rescaled_fluctuation, simulate_Z, simulate_feedback,
                     simulate_fou_limit, simulate_fractional_vol,
                     simulate_no_feedback, simulate_random_coeff, solve_fluid)
from .semi_markov import (SemiMarkovPath, SemiMarkovSpec, SojournLaw,
                          embedded_stationary, hurst_from_alpha, mean_sojourn,
                          occupation_law, sample_sojourn, simulate,
                          stationary_init)
from .stats import (HurstEstimate, convergence_slope, hurst_dfa, hurst_rs,
                    hurst_wavelet, ks_normal, ks_two_sample, poisson_clt_check,
                    sup_error)

__all__ = [name for name in dir() if not name.startswith("_")]
