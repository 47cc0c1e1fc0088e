"""Price formation models driven by inert investors, and their limits.

Two simulators and the limit objects they converge to:

* no-feedback model: agents accumulate stock at rate Psi_t * x_t where x is
  a stationary semi-Markov mood process sped up by a factor T; the
  logarithmic price is the N-agent average of the accumulated holdings.
  Rescaled fluctuations around the deterministic drift converge (N then T)
  to a fractional Brownian motion with Hurst index (3 - alpha)/2.

* feedback model: agents emit buy/sell orders through Poisson clocks with
  rates lambda_pm(x, S) that depend on the current log-price S; each order
  moves the price by 1/(N T).  As N grows the price follows the fluid ODE
  ds/dt = lambda_bar(s); the sqrt(N)-scaled fluctuations follow a Gaussian
  process Z driven by the order-time noise X and the mood noise Y; after
  speeding the moods up and rescaling once more the fluctuations behave
  like a (fractional) Ornstein-Uhlenbeck process.

The rate functions are separable, lambda_pm(x, s) = f(x) g_pm(s) + h_pm(s),
which is what makes the total order rate cheap to track (only sum_i c_i
f(i) matters) and the mood-noise covariance factor into g(s_t) g(s_u) times
the autocovariance of f(x_t).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import semi_markov as sm
from .errors import NumericError, ValidationError
from .fractional import (FbmPath, GridSeries, covariance_root, generate_fbm,
                         gaussian_from_cov, require_same_grid, simulate_fou)

MAX_EXPECTED_EVENTS = 1e9
DEFAULT_GRID_STEP = 2.0 ** -10


# ---------------------------------------------------------------------------
# scalar rate functions

@dataclass(frozen=True)
class ScalarFunction:
    """Bounded smooth scalar function from a small serializable catalog.

    kinds: 'constant' (value); 'logistic' (amplitude, center, slope) for
    amplitude / (1 + exp(slope (s - center))); 'linear_clipped'
    (intercept, slope, lo, hi) for clip(intercept + slope s, lo, hi).
    Each kind knows its sup-norm bound and a derivative (Lipschitz) bound.
    """

    kind: str
    params: tuple

    def __post_init__(self):
        if self.kind == "constant":
            if len(self.params) != 1:
                raise ValidationError("constant takes a single value")
        elif self.kind == "logistic":
            if len(self.params) != 3:
                raise ValidationError("logistic takes (amplitude, center, slope)")
        elif self.kind == "linear_clipped":
            if len(self.params) != 4 or not self.params[2] <= self.params[3]:
                raise ValidationError(
                    "linear_clipped takes (intercept, slope, lo, hi) with lo <= hi")
        else:
            raise ValidationError(f"unknown scalar function kind {self.kind!r}")

    @classmethod
    def constant(cls, value):
        return cls("constant", (float(value),))

    @classmethod
    def logistic(cls, amplitude, center=0.0, slope=1.0):
        return cls("logistic", (float(amplitude), float(center), float(slope)))

    @classmethod
    def linear_clipped(cls, intercept, slope, lo, hi):
        return cls("linear_clipped", (float(intercept), float(slope), float(lo), float(hi)))

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "constant":
            out = np.full_like(s, self.params[0])
        elif self.kind == "logistic":
            amp, center, slope = self.params
            out = amp / (1.0 + np.exp(slope * (s - center)))
        else:
            intercept, slope, lo, hi = self.params
            out = np.clip(intercept + slope * s, lo, hi)
        return float(out) if out.ndim == 0 else out

    def derivative(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "constant":
            out = np.zeros_like(s)
        elif self.kind == "logistic":
            amp, center, slope = self.params
            e = np.exp(slope * (s - center))
            out = -amp * slope * e / (1.0 + e) ** 2
        else:
            intercept, slope, lo, hi = self.params
            raw = intercept + slope * s
            out = np.where((raw > lo) & (raw < hi), slope, 0.0)
        return float(out) if out.ndim == 0 else out

    @property
    def bound(self):
        """Supremum of |f| over the real line."""
        if self.kind == "constant":
            return abs(self.params[0])
        if self.kind == "logistic":
            return abs(self.params[0])
        return max(abs(self.params[2]), abs(self.params[3]))

    @property
    def deriv_bound(self):
        if self.kind == "constant":
            return 0.0
        if self.kind == "logistic":
            return abs(self.params[0] * self.params[2]) / 4.0
        return abs(self.params[1])

    def scalar(self):
        """Pure-python closure for the event loop (no numpy overhead)."""
        if self.kind == "constant":
            c = self.params[0]
            return lambda s: c
        if self.kind == "logistic":
            amp, center, slope = self.params
            return lambda s: amp / (1.0 + math.exp(slope * (s - center)))
        intercept, slope, lo, hi = self.params
        return lambda s: min(max(intercept + slope * s, lo), hi)

    def to_dict(self):
        names = {
            "constant": ("value",),
            "logistic": ("amplitude", "center", "slope"),
            "linear_clipped": ("intercept", "slope", "lo", "hi"),
        }[self.kind]
        return {"kind": self.kind, "params": dict(zip(names, self.params))}

    @classmethod
    def from_dict(cls, d):
        try:
            kind, params = d["kind"], d["params"]
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed scalar function record: {d!r}") from exc
        order = {
            "constant": ("value",),
            "logistic": ("amplitude", "center", "slope"),
            "linear_clipped": ("intercept", "slope", "lo", "hi"),
        }
        if kind not in order:
            raise ValidationError(f"unknown scalar function kind {kind!r}")
        defaults = {"center": 0.0, "slope": 1.0}
        vals = []
        for name in order[kind]:
            if name in params:
                vals.append(float(params[name]))
            elif name in defaults and kind == "logistic":
                vals.append(defaults[name])
            else:
                raise ValidationError(f"scalar function {kind!r} missing param {name!r}")
        return cls(kind, tuple(vals))


ZERO = ScalarFunction.constant(0.0)


# ---------------------------------------------------------------------------
# rate specification

@dataclass(frozen=True)
class RateSpec:
    """Separable order rates lambda_pm(x, s) = f(x) g_pm(s) + h_pm(s).

    f maps each mood state to a real sensitivity (one-to-one, with 0 in its
    domain); the four scalar functions carry their own bounds.  Rates are
    validated for nonnegativity on a grid over price_range; derivative
    bounds come from the catalog.  Setting f(0) = 0 with h_pm = 0 expresses
    investors who do not trade at all in the inactive state.
    """

    f: dict
    g_plus: ScalarFunction = ZERO
    g_minus: ScalarFunction = ZERO
    h_plus: ScalarFunction = ZERO
    h_minus: ScalarFunction = ZERO
    price_range: tuple = (-5.0, 5.0)

    _N_GRID = 201

    def __post_init__(self):
        f = {int(k): float(v) for k, v in self.f.items()}
        object.__setattr__(self, "f", f)
        if 0 not in f:
            raise ValidationError("f must be defined at the inactive state 0")
        if len(set(f.values())) != len(f):
            raise ValidationError("f must be one-to-one")
        lo, hi = self.price_range
        if not lo < hi:
            raise ValidationError("price_range must be an increasing pair")
        grid = np.linspace(lo, hi, self._N_GRID)
        for name, g, h in (("lambda_plus", self.g_plus, self.h_plus),
                           ("lambda_minus", self.g_minus, self.h_minus)):
            base_g, base_h = g(grid), h(grid)
            for x, fx in f.items():
                vals = fx * base_g + base_h
                if np.min(vals) < -1e-12:
                    raise ValidationError(
                        f"{name}(x={x}, s) is negative on the declared price range "
                        f"(min {np.min(vals):.3e} near s={grid[np.argmin(vals)]:.3g})")

    @property
    def states(self):
        return tuple(sorted(self.f))

    def f_values(self, states):
        try:
            return np.array([self.f[int(s)] for s in states], dtype=float)
        except KeyError as exc:
            raise ValidationError(f"f is not defined at state {exc.args[0]}") from None

    def lam_plus(self, x, s):
        return self.f[int(x)] * self.g_plus(s) + self.h_plus(s)

    def lam_minus(self, x, s):
        return self.f[int(x)] * self.g_minus(s) + self.h_minus(s)

    def lam(self, x, s):
        return self.lam_plus(x, s) - self.lam_minus(x, s)

    def g(self, s):
        """Separable factor g = g_plus - g_minus of the net rate."""
        return self.g_plus(s) - self.g_minus(s)

    @property
    def rate_bound(self):
        fmax = max(abs(v) for v in self.f.values())
        return max(fmax * self.g_plus.bound + self.h_plus.bound,
                   fmax * self.g_minus.bound + self.h_minus.bound)

    @property
    def lipschitz_bound(self):
        fmax = max(abs(v) for v in self.f.values())
        return max(fmax * self.g_plus.deriv_bound + self.h_plus.deriv_bound,
                   fmax * self.g_minus.deriv_bound + self.h_minus.deriv_bound)

    def validate_against(self, spec):
        """Cross-checks against a semi-Markov spec: every state needs an f
        value and the sensitivity must be non-degenerate, f(0) != E_nu f."""
        missing = [s for s in spec.states if s not in self.f]
        if missing:
            raise ValidationError(f"f is not defined at states {missing}")
        nu = sm.occupation_law(spec)
        mu_hat = self.f[0]
        f_mean = float(nu @ self.f_values(spec.states))
        if abs(mu_hat - f_mean) <= 1e-12 * (1.0 + abs(mu_hat)):
            raise ValidationError(
                "degenerate sensitivity: f(0) equals the occupation-law mean "
                f"of f ({f_mean!r}); the mood noise would vanish")

    def to_dict(self):
        return {
            "f": {str(k): v for k, v in sorted(self.f.items())},
            "g_plus": self.g_plus.to_dict(),
            "g_minus": self.g_minus.to_dict(),
            "h_plus": self.h_plus.to_dict(),
            "h_minus": self.h_minus.to_dict(),
            "price_range": list(self.price_range),
        }

    @classmethod
    def from_dict(cls, d):
        if "f" not in d:
            raise ValidationError("rate spec missing field 'f'")
        kwargs = {}
        for name in ("g_plus", "g_minus", "h_plus", "h_minus"):
            if name in d:
                kwargs[name] = ScalarFunction.from_dict(d[name])
        if "price_range" in d:
            kwargs["price_range"] = tuple(d["price_range"])
        return cls(f={int(k): float(v) for k, v in d["f"].items()}, **kwargs)


@dataclass(frozen=True)
class MarketConfig:
    """One feedback-market run: N agents at time scale T on [0, horizon]."""

    n_agents: int
    semi_markov: sm.SemiMarkovSpec
    rates: RateSpec
    time_scale: float = 1.0
    horizon: float = 1.0
    seed: int = None
    grid_step: float = DEFAULT_GRID_STEP

    def __post_init__(self):
        if not self.n_agents >= 1:
            raise ValidationError("need at least one agent")
        if not self.time_scale >= 1.0:
            raise ValidationError("time scale T must be >= 1")
        if not self.horizon > 0:
            raise ValidationError("horizon must be positive")
        if not self.grid_step > 0:
            raise ValidationError("grid_step must be positive")
        self.rates.validate_against(self.semi_markov)


@dataclass(frozen=True)
class PricePath:
    """Event-level log-price trajectory of the feedback model.

    prices[k] is the log price just after the k-th order; every order moves
    the price by exactly 1/(N T).  The path starts at 0 by convention.
    """

    event_times: np.ndarray
    prices: np.ndarray
    n_agents: int
    time_scale: float
    horizon: float

    def __post_init__(self):
        object.__setattr__(self, "event_times", np.asarray(self.event_times, float))
        object.__setattr__(self, "prices", np.asarray(self.prices, float))
        if len(self.event_times) != len(self.prices):
            raise ValidationError("event_times and prices must be equal length")

    @property
    def event_count(self):
        return len(self.event_times)

    @property
    def tick(self):
        return 1.0 / (self.n_agents * self.time_scale)

    def tick_steps(self):
        """Signed integer price moves, exact on the 1/(N T) lattice."""
        counts = np.rint(self.prices / self.tick).astype(np.int64)
        return np.diff(np.concatenate([[0], counts]))

    def grid(self, grid_step=DEFAULT_GRID_STEP):
        """Piecewise-constant view sampled on a uniform grid."""
        n = int(round(self.horizon / grid_step))
        t = grid_step * np.arange(n + 1)
        idx = np.searchsorted(self.event_times, t, side="right") - 1
        vals = np.where(idx >= 0, np.concatenate([[0.0], self.prices])[idx + 1], 0.0)
        return GridSeries(grid_step, vals, "log-price")

    def final_price(self):
        return float(self.prices[-1]) if len(self.prices) else 0.0

    def write_csv(self, fname):
        with open(fname, "w") as fh:
            fh.write("event_index,time,log_price\n")
            for k, (t, p) in enumerate(zip(self.event_times, self.prices)):
                fh.write(f"{k},{t!r},{p!r}\n")


# ---------------------------------------------------------------------------
# fluid limit

class MeanRates:
    """Occupation-averaged order rates and their price derivative.

    lam_plus/lam_minus are the expected buy/sell rates at log-price s under
    the stationary mood distribution; lam = lam_plus - lam_minus drives the
    fluid ODE and lam_prime is its derivative in s (analytic through the
    scalar-function catalog).
    """

    def __init__(self, rates, nu, states):
        nu = np.asarray(nu, float)
        if len(nu) != len(states) or abs(nu.sum() - 1.0) > 1e-9 or np.any(nu < 0):
            raise ValidationError("nu must be a probability vector over the states")
        self.rates = rates
        self.mu_f = float(nu @ rates.f_values(states))
        self.mu = float(nu @ np.asarray(states, float))

    def lam_plus(self, s):
        return self.mu_f * self.rates.g_plus(s) + self.rates.h_plus(s)

    def lam_minus(self, s):
        return self.mu_f * self.rates.g_minus(s) + self.rates.h_minus(s)

    def lam(self, s):
        return self.lam_plus(s) - self.lam_minus(s)

    def lam_prime(self, s):
        r = self.rates
        return (self.mu_f * (r.g_plus.derivative(s) - r.g_minus.derivative(s))
                + r.h_plus.derivative(s) - r.h_minus.derivative(s))


class _CallableMeanRates:
    """Adapter when only a bare net-rate callable is supplied: the positive
    and negative parts stand in for the buy/sell split and the derivative
    is a central difference with step 1e-6."""

    def __init__(self, lam):
        self._lam = lam

    def lam(self, s):
        return self._lam(s)

    def lam_plus(self, s):
        return np.maximum(self._lam(s), 0.0)

    def lam_minus(self, s):
        return np.maximum(-np.asarray(self._lam(s), float), 0.0)

    def lam_prime(self, s):
        h = 1e-6
        return (self._lam(s + h) - self._lam(s - h)) / (2.0 * h)


def mean_rates(rates, nu, states):
    """Build the expected-rate callables from a rate spec and occupation law."""
    return MeanRates(rates, nu, states)


@dataclass(frozen=True)
class FluidSolution:
    """Fluid ODE trajectory with the mean rates recorded along it."""

    s: GridSeries
    lam_bar: GridSeries
    lam_plus: GridSeries
    lam_minus: GridSeries
    lam_prime: GridSeries

    @property
    def grid_step(self):
        return self.s.grid_step

    def write_csv(self, fname):
        with open(fname, "w") as fh:
            fh.write("time,s,lambda_bar,lambda_plus,lambda_minus,lambda_prime\n")
            for row in zip(self.s.times, self.s.values, self.lam_bar.values,
                           self.lam_plus.values, self.lam_minus.values,
                           self.lam_prime.values):
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


def solve_fluid(rates_or_lam, s0=0.0, horizon=1.0, dt=DEFAULT_GRID_STEP):
    """Integrate ds/dt = lam_bar(s) with the classical 4th-order scheme.

    Accepts a MeanRates object or a bare callable; global error is O(dt^4)
    for the smooth bounded rates this package produces.
    """
    mr = rates_or_lam if hasattr(rates_or_lam, "lam_prime") else _CallableMeanRates(rates_or_lam)
    if not dt <= 1e-2:
        raise ValidationError("fluid solver requires dt <= 1e-2")
    n = int(round(horizon / dt))
    if abs(n * dt - horizon) > 1e-9 * horizon:
        raise ValidationError("grid step must divide the horizon")
    lam = mr.lam
    s = np.empty(n + 1)
    s[0] = s0
    for k in range(n):
        y = s[k]
        k1 = lam(y)
        k2 = lam(y + 0.5 * dt * k1)
        k3 = lam(y + 0.5 * dt * k2)
        k4 = lam(y + dt * k3)
        s[k + 1] = y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return FluidSolution(
        s=GridSeries(dt, s, "fluid"),
        lam_bar=GridSeries(dt, np.asarray(lam(s), float), "lambda-bar"),
        lam_plus=GridSeries(dt, np.asarray(mr.lam_plus(s), float), "lambda-plus"),
        lam_minus=GridSeries(dt, np.asarray(mr.lam_minus(s), float), "lambda-minus"),
        lam_prime=GridSeries(dt, np.asarray(mr.lam_prime(s), float), "lambda-prime"),
    )


def fluid_for_config(config, dt=None):
    """Fluid solution matching a market config's stationary occupation law."""
    nu = sm.occupation_law(config.semi_markov)
    mr = mean_rates(config.rates, nu, config.semi_markov.states)
    return solve_fluid(mr, s0=0.0, horizon=config.horizon,
                       dt=config.grid_step if dt is None else dt)


# ---------------------------------------------------------------------------
# feedback simulator

def expected_event_count(config):
    """Crude upper estimate of (orders + mood jumps) for the run guard."""
    spec = config.semi_markov
    min_mean = min(spec.mean_sojourns())
    orders = (2.0 * config.time_scale * config.n_agents
              * config.rates.rate_bound * config.horizon)
    jumps = config.n_agents * (1.0 + config.time_scale * config.horizon / min_mean)
    return orders + jumps


def simulate_feedback(config, rng):
    """Exact event-driven simulation of the feedback market.

    Between events every agent's mood and the price are constant, so the
    total buy/sell order rates are constant and the next order arrives
    after an exponential waiting time; mood-change epochs are pre-sampled
    from the stationary semi-Markov ensemble (they do not feel the price).
    Separability keeps the per-event work O(1): the total rates only need
    F = sum_i count_i f(i), updated incrementally at mood jumps.

    Orders move the log price by 1/(N T); mood clocks run at speed T.
    """
    est = expected_event_count(config)
    if est > MAX_EXPECTED_EVENTS:
        raise ValidationError(
            f"refusing to run: about {est:.3e} expected events "
            f"(limit {MAX_EXPECTED_EVENTS:.0e}); lower N, T or the rate bounds")
    spec, rates = config.semi_markov, config.rates
    n_agents, t_scale, horizon = config.n_agents, config.time_scale, config.horizon

    init_idx, jump_t, jump_from, jump_to = sm.simulate_jump_stream(
        spec, n_agents, t_scale * horizon, rng)
    f_by_idx = rates.f_values(spec.states)
    f_total = float(f_by_idx[init_idx].sum())
    jump_times = (jump_t / t_scale).tolist()
    f_deltas = (f_by_idx[jump_to] - f_by_idx[jump_from]).tolist()
    jump_times.append(horizon)
    f_deltas.append(0.0)

    gp, gm = rates.g_plus.scalar(), rates.g_minus.scalar()
    hp, hm = rates.h_plus.scalar(), rates.h_minus.scalar()
    tick = 1.0 / (n_agents * t_scale)
    exp_draw = rng.exponential
    uni_draw = rng.random

    # the price lives on the tick lattice; tracking the integer level keeps
    # it exact over millions of orders
    level = 0
    price = 0.0
    t = 0.0
    times, prices = [], []
    for seg_end, f_delta in zip(jump_times, f_deltas):
        while True:
            rate_plus = t_scale * (f_total * gp(price) + n_agents * hp(price))
            rate_minus = t_scale * (f_total * gm(price) + n_agents * hm(price))
            if rate_plus < -1e-9 or rate_minus < -1e-9:
                raise NumericError(
                    f"order rate went negative at log-price {price:.4g}; "
                    "the price left the validated range")
            total = rate_plus + rate_minus
            if total <= 0.0:
                break
            t_next = t + exp_draw() / total
            if t_next >= seg_end:
                break
            t = t_next
            level += 1 if uni_draw() * total < rate_plus else -1
            price = level * tick
            times.append(t)
            prices.append(price)
        t = seg_end
        f_total += f_delta
    return PricePath(np.array(times), np.array(prices),
                     n_agents, t_scale, horizon)


# ---------------------------------------------------------------------------
# no-feedback model

def generate_psi(drift, vol, n_grid, horizon, rng):
    """Trade-size process exp(drift t + vol W_t), a continuous semimartingale."""
    dt = horizon / n_grid
    w = np.concatenate([[0.0], np.cumsum(math.sqrt(dt) * rng.standard_normal(n_grid))])
    t = dt * np.arange(n_grid + 1)
    return GridSeries(dt, np.exp(drift * t + vol * w), "psi")


def _psi_values(psi, n_grid, dt):
    if psi is None:
        return np.ones(n_grid + 1)
    if isinstance(psi, (int, float)):
        return np.full(n_grid + 1, float(psi))
    if len(psi.values) != n_grid + 1 or abs(psi.grid_step - dt) > 1e-12 * dt:
        raise ValidationError("psi must live on the simulation grid")
    return psi.values


def _cumtrapz(values, dt):
    out = np.empty(len(values))
    out[0] = 0.0
    np.cumsum(0.5 * dt * (values[1:] + values[:-1]), out=out[1:])
    return out


def simulate_no_feedback(n_agents, time_scale, spec, rng, horizon=1.0,
                         n_grid=1024, psi=None):
    """Log price of the no-feedback model on a uniform grid.

    S_t = (1/N) int_0^t sum_a Psi_u x^a_{Tu} du, computed by trapezoidal
    integration of the empirical mood mean times Psi on the grid.  Agents
    are stationary; psi may be None (identically 1), a constant, or a
    GridSeries on the same grid.
    """
    dt = horizon / n_grid
    grid_agent_time = (time_scale * dt) * np.arange(n_grid + 1)
    total = sm.states_on_grid(spec, n_agents, grid_agent_time, rng, sum_only=True)
    integrand = _psi_values(psi, n_grid, dt) * (total / n_agents)
    return GridSeries(dt, _cumtrapz(integrand, dt), "no-feedback price")


def no_feedback_ensemble(n_members, n_agents, time_scale, spec, rng,
                         horizon=1.0, n_grid=1024, psi=None):
    """Ensemble of no-feedback price paths computed as one vector job.

    All members' agents run through a single grouped pass of the mood
    engine, which is an order of magnitude faster than member-by-member
    simulation; the price of that speed is a single random stream for the
    whole ensemble instead of one child stream per member.  Returns a list
    of GridSeries.
    """
    dt = horizon / n_grid
    grid_agent_time = (time_scale * dt) * np.arange(n_grid + 1)
    groups = np.repeat(np.arange(n_members), n_agents)
    sums = sm.states_on_grid(spec, n_members * n_agents, grid_agent_time, rng,
                             group_ids=groups, n_groups=n_members)
    psi_vals = _psi_values(psi, n_grid, dt)
    out = []
    for m in range(n_members):
        integrand = psi_vals * (sums[m] / n_agents)
        out.append(GridSeries(dt, _cumtrapz(integrand, dt), "no-feedback price"))
    return out


def no_feedback_drift(spec, horizon=1.0, n_grid=1024, psi=None):
    """First-order path mu int_0^t Psi ds with mu the stationary mood mean."""
    nu = sm.occupation_law(spec)
    mu = float(nu @ np.asarray(spec.states, float))
    dt = horizon / n_grid
    return GridSeries(dt, mu * _cumtrapz(_psi_values(psi, n_grid, dt), dt),
                      "no-feedback drift")


def rescaled_fluctuation(path, reference, n_agents, time_scale, hurst):
    """T^(1-H) sqrt(N) (path - reference), the fluctuation scaling."""
    require_same_grid(path, reference, "path and reference")
    scale = time_scale ** (1.0 - hurst) * math.sqrt(n_agents)
    return GridSeries(path.grid_step, scale * (path.values - reference.values),
                      "rescaled fluctuation")


# ---------------------------------------------------------------------------
# second-order limit objects

def process_X(fluid, rng):
    """Order-time noise X_t = B+(int lam_plus) - B-(int lam_minus).

    Sampled exactly on the fluid grid from independent Gaussian increments
    with variances equal to the per-cell clock increments.
    """
    dt = fluid.grid_step
    dtau_p = 0.5 * dt * (fluid.lam_plus.values[1:] + fluid.lam_plus.values[:-1])
    dtau_m = 0.5 * dt * (fluid.lam_minus.values[1:] + fluid.lam_minus.values[:-1])
    if np.min(dtau_p) < -1e-12 or np.min(dtau_m) < -1e-12:
        raise ValidationError("negative clock increment: mean rates must be >= 0")
    n = len(dtau_p)
    inc = (np.sqrt(np.clip(dtau_p, 0.0, None)) * rng.standard_normal(n)
           - np.sqrt(np.clip(dtau_m, 0.0, None)) * rng.standard_normal(n))
    return GridSeries(dt, np.concatenate([[0.0], np.cumsum(inc)]), "order noise")


def gamma_cov(spec, rates, fluid, grid_times, n_mc, rng, time_scale=1.0):
    """Monte-Carlo covariance of the net order rate along the fluid path.

    gamma(t, u) = Cov(lambda(x_t, s_t), lambda(x_u, s_u)) estimated over
    n_mc independent stationary mood paths evaluated at grid_times, then
    symmetrized.  Fewer than 100 paths is refused as hopelessly noisy.
    """
    if n_mc < 100:
        raise ValidationError("n_mc must be at least 100")
    grid_times = np.asarray(grid_times, float)
    if grid_times[0] != 0.0 or np.any(np.diff(grid_times) <= 0):
        raise ValidationError("grid_times must increase from 0")
    if grid_times[-1] > fluid.s.horizon + 1e-12:
        raise ValidationError("grid_times must stay within the fluid horizon")
    states = sm.states_on_grid(spec, n_mc, time_scale * grid_times, rng)
    uniq, inv = np.unique(states, return_inverse=True)
    f_of = rates.f_values(uniq)[inv].reshape(states.shape)
    s_vals = np.interp(grid_times, fluid.s.times, fluid.s.values)
    lam_mat = f_of * rates.g(s_vals)[None, :]  # h(s) is deterministic: no covariance
    centered = lam_mat - lam_mat.mean(axis=0, keepdims=True)
    cov = centered.T @ centered / (n_mc - 1)
    return 0.5 * (cov + cov.T)


def interpolate_cov(cov, coarse_times, fine_times):
    """Bilinear interpolation of a covariance matrix onto a finer grid.

    Implemented as W C W^T with W the one-dimensional linear-interpolation
    weights, which keeps positive semidefiniteness exactly.
    """
    coarse_times = np.asarray(coarse_times, float)
    fine_times = np.asarray(fine_times, float)
    n_c = len(coarse_times)
    idx = np.clip(np.searchsorted(coarse_times, fine_times, side="right") - 1,
                  0, n_c - 2)
    span = coarse_times[idx + 1] - coarse_times[idx]
    frac = np.clip((fine_times - coarse_times[idx]) / span, 0.0, 1.0)
    w = np.zeros((len(fine_times), n_c))
    rows = np.arange(len(fine_times))
    w[rows, idx] = 1.0 - frac
    w[rows, idx + 1] += frac
    return w @ np.asarray(cov, float) @ w.T


def _z_from_root(fluid, root, rng):
    n = len(fluid.s.values)
    dt = fluid.grid_step
    y = root @ rng.standard_normal(n)
    big_y = _cumtrapz(y, dt)
    x = process_X(fluid, rng)
    shocks = np.diff(big_y) + np.diff(x.values)
    factors = 1.0 + fluid.lam_prime.values[:-1] * dt
    if np.all(factors > 0.0):
        log_a = np.concatenate([[0.0], np.cumsum(np.log(factors))])
        if np.abs(log_a).max() < 500.0:
            a = np.exp(log_a)
            return GridSeries(dt, a * np.concatenate(
                [[0.0], np.cumsum(shocks / a[1:])]), "second-order fluctuation")
    z = np.empty(n)
    z[0] = 0.0
    for k in range(n - 1):
        z[k + 1] = factors[k] * z[k] + shocks[k]
    return GridSeries(dt, z, "second-order fluctuation")


def _checked_root(fluid, gamma):
    gamma = np.asarray(gamma, float)
    n = len(fluid.s.values)
    if gamma.shape != (n, n):
        raise ValidationError(
            f"gamma must be {n}x{n} on the fluid grid, got {gamma.shape}")
    return covariance_root(0.5 * (gamma + gamma.T))


def simulate_Z(fluid, gamma, rng):
    """One draw of the sqrt(N) fluctuation limit Z on the fluid grid.

    y is a centered Gaussian vector with covariance gamma; Y integrates y;
    X is the order-time noise; Z solves the explicit recursion
    Z_{k+1} = Z_k + lam_prime(s_k) Z_k dt + (Y_{k+1}-Y_k) + (X_{k+1}-X_k).
    """
    return _z_from_root(fluid, _checked_root(fluid, gamma), rng)


def simulate_Z_ensemble(fluid, gamma, rngs):
    """Independent Z draws sharing one factorization of gamma.

    Factoring the covariance dominates a single draw, so ensembles should
    go through here with one child generator per member.
    """
    root = _checked_root(fluid, gamma)
    return [_z_from_root(fluid, root, rng) for rng in rngs]


def simulate_fou_limit(fluid, rates, sigma, hurst, rng, fbm=None):
    """Rescaled large-T fluctuation: mean reversion lam_prime(s_t), noise
    sigma g(s_t) dB^H.  hurst = 1/2 reproduces the Markov-switching case
    (a standard Ornstein-Uhlenbeck process in a time-varying environment).
    """
    if not 0.5 <= hurst < 1.0:
        raise ValidationError(f"Hurst index must lie in [1/2, 1), got {hurst}")
    n = len(fluid.s.values) - 1
    if fbm is None:
        fbm = generate_fbm(hurst, n, fluid.s.horizon, rng)
    drift = fluid.lam_prime
    diffusion = GridSeries(fluid.grid_step, rates.g(fluid.s.values), "g(s)")
    out = simulate_fou(drift, diffusion, sigma, fbm)
    return GridSeries(out.grid_step, out.values, "fou fluctuation")


# ---------------------------------------------------------------------------
# side models

def simulate_random_coeff(n_steps, coeff_sampler, s0, rng):
    """Discrete price recursion S_t = (1 + gt_t) S_{t-1} + g_t.

    coeff_sampler(rng, n) must return the two i.i.d. coefficient arrays
    (gt, g) of length n.  Returns the length n_steps+1 trajectory starting
    at s0.
    """
    if n_steps < 1:
        raise ValidationError("need at least one step")
    gt, g = coeff_sampler(rng, n_steps)
    gt = np.asarray(gt, float)
    g = np.asarray(g, float)
    if gt.shape != (n_steps,) or g.shape != (n_steps,):
        raise ValidationError("coefficient sampler returned wrong shapes")
    out = np.empty(n_steps + 1)
    out[0] = s0
    cur = float(s0)
    for k in range(n_steps):
        cur = (1.0 + gt[k]) * cur + g[k]
        out[k + 1] = cur
    return out


def simulate_fractional_vol(lam_plus, lam_minus, time_scale, rng, hurst=0.75,
                            n_grid=1024, horizon=1.0, fbm=None):
    """Price with volatility driven by a slow fractional mood factor.

    The net rate of the fast order flow is evaluated along an fBm path:
    S_t = int lam(B^H_u) du + T^(-1/2) [int sqrt(lam_plus(B^H)) dW+ -
    int sqrt(lam_minus(B^H)) dW-], with independent Brownian drivers.
    Rates must be nonnegative wherever the fBm path lands.
    """
    if not 0.5 < hurst < 1.0:
        raise ValidationError(f"Hurst index must lie in (1/2, 1), got {hurst}")
    if fbm is None:
        fbm = generate_fbm(hurst, n_grid, horizon, rng)
    dt = fbm.grid_step
    b = fbm.values
    rp = np.asarray(lam_plus(b), float)
    rm = np.asarray(lam_minus(b), float)
    if np.min(rp) < 0 or np.min(rm) < 0:
        raise ValidationError("rate functions must be nonnegative along the path")
    drift = _cumtrapz(rp - rm, dt)
    n = len(b) - 1
    scale = math.sqrt(dt) / math.sqrt(time_scale)
    noise = np.concatenate([[0.0], np.cumsum(
        scale * (np.sqrt(rp[:-1]) * rng.standard_normal(n)
                 - np.sqrt(rm[:-1]) * rng.standard_normal(n)))])
    return GridSeries(dt, drift + noise, "fractional-vol price")
