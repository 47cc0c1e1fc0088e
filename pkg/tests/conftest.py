"""Shared model fixtures: the canonical specs used across the suite."""

import numpy as np
import pytest

from inertsim import market as mk
from inertsim import semi_markov as sm

# scale for a unit-mean Weibull with shape 2: 1/Gamma(1.5)
WEIBULL2_UNIT_SCALE = 1.1283791670955126


def markov_spec(rate0=1.0, rate1=1.0, p=None):
    """Two-state all-exponential spec (a Markov chain in disguise)."""
    if p is None:
        p = [[0.5, 0.5], [0.5, 0.5]]
    return sm.SemiMarkovSpec((0, 1), p,
                             {0: sm.SojournLaw.exponential(rate0),
                              1: sm.SojournLaw.exponential(rate1)})


def inert_spec(alpha=1.5):
    """Canonical inert-investor spec: Pareto(1, alpha) rest, unit-mean
    Weibull(2) activity, mostly alternating embedded chain."""
    return sm.SemiMarkovSpec(
        (0, 1), [[0.1, 0.9], [0.9, 0.1]],
        {0: sm.SojournLaw.pareto(1.0, alpha),
         1: sm.SojournLaw.weibull(2.0, WEIBULL2_UNIT_SCALE)})


def three_state_spec(alpha=1.5):
    return sm.SemiMarkovSpec(
        (0, 1, 2), np.full((3, 3), 1.0 / 3.0),
        {0: sm.SojournLaw.pareto(1.0, alpha),
         1: sm.SojournLaw.exponential(1.0),
         2: sm.SojournLaw.exponential(1.0)})


def logistic_rates(amplitude=0.5, h_plus=0.15):
    """Canonical bounded logistic rate spec: buying tempered by high prices,
    selling tempered by low ones, plus a constant bid inflow."""
    return mk.RateSpec(f={0: 0.0, 1: 1.0},
                       g_plus=mk.ScalarFunction.logistic(amplitude, 0.0, 1.0),
                       g_minus=mk.ScalarFunction.logistic(amplitude, 0.0, -1.0),
                       h_plus=mk.ScalarFunction.constant(h_plus))


def constant_rates(c_plus, c_minus=0.0):
    """State-independent order rates (f plays no role in the totals)."""
    return mk.RateSpec(f={0: 0.0, 1: 1.0},
                       h_plus=mk.ScalarFunction.constant(c_plus),
                       h_minus=mk.ScalarFunction.constant(c_minus))


@pytest.fixture
def rng():
    return np.random.default_rng(20260809)
