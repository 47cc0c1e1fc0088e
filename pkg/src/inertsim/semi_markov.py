"""Semi-Markov "investor mood" processes.

An agent's activity state follows a jump process on a finite integer state
space containing 0 (the inactive state): the embedded state sequence is a
Markov chain with transition matrix P, and the holding time in a state has
an arbitrary state-dependent distribution.  Inertia is modeled by giving
state 0 a heavy-tailed (Pareto) sojourn law with tail index alpha in (1,2):
finite mean, infinite variance.  All other states are restricted to a
thin-tailed catalog (exponential, Weibull with shape >= 1, deterministic).

Stationary initialization draws the initial state from the occupation law
(embedded stationary weights times mean sojourns, normalized) and the
initial residual holding time from the length-biased equilibrium excess
distribution with density (1 - G(t)) / m.  For the Pareto law the excess
distribution itself is heavy tailed with index alpha - 1, which is the
source of long-range dependence in everything built on top of this module.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import NumericError, ValidationError

_THIN_TAILED_KINDS = ("exponential", "weibull", "deterministic")


@dataclass(frozen=True)
class SojournLaw:
    """Holding-time distribution, one of a small validated catalog.

    kind: 'exponential' (rate), 'pareto' (scale, tail), 'weibull'
    (shape, scale) or 'deterministic' (value).
    """

    kind: str
    params: tuple

    def __post_init__(self):
        if self.kind not in ("exponential", "pareto", "weibull", "deterministic"):
            raise ValidationError(f"unknown sojourn law kind {self.kind!r}")
        if any(not (p > 0) for p in self.params):
            raise ValidationError(
                f"{self.kind} parameters must be strictly positive, got {self.params}")
        if self.kind == "pareto" and not self.params[1] > 1:
            raise ValidationError(
                f"pareto tail index must exceed 1 for a finite mean, got {self.params[1]}")
        if self.kind == "weibull" and self.params[0] < 1:
            raise ValidationError(
                f"weibull shape must be >= 1 (thin-tailed catalog), got {self.params[0]}")

    @classmethod
    def exponential(cls, rate):
        return cls("exponential", (float(rate),))

    @classmethod
    def pareto(cls, scale, tail):
        return cls("pareto", (float(scale), float(tail)))

    @classmethod
    def weibull(cls, shape, scale):
        return cls("weibull", (float(shape), float(scale)))

    @classmethod
    def deterministic(cls, value):
        return cls("deterministic", (float(value),))

    @property
    def tail_index(self):
        """Pareto tail exponent, or None for the thin-tailed kinds."""
        return self.params[1] if self.kind == "pareto" else None

    def mean(self):
        """Closed-form mean holding time."""
        if self.kind == "exponential":
            return 1.0 / self.params[0]
        if self.kind == "pareto":
            xm, a = self.params
            return a * xm / (a - 1.0)
        if self.kind == "weibull":
            k, lam = self.params
            return lam * math.gamma(1.0 + 1.0 / k)
        return self.params[0]

    def survival(self, t):
        """P{duration > t}; accepts scalars or arrays."""
        t = np.asarray(t, dtype=float)
        if self.kind == "exponential":
            out = np.exp(-self.params[0] * t)
        elif self.kind == "pareto":
            xm, a = self.params
            out = np.where(t < xm, 1.0, (xm / np.maximum(t, xm)) ** a)
        elif self.kind == "weibull":
            k, lam = self.params
            out = np.exp(-((t / lam) ** k))
        else:
            out = np.where(t < self.params[0], 1.0, 0.0)
        return np.where(t < 0, 1.0, out)

    def sample(self, rng, size=None):
        """Draw holding times.  Pareto uses the inverse CDF x_m * U^(-1/alpha)."""
        if self.kind == "exponential":
            return rng.exponential(1.0 / self.params[0], size=size)
        if self.kind == "pareto":
            xm, a = self.params
            u = rng.random(size)
            return xm * u ** (-1.0 / a)
        if self.kind == "weibull":
            k, lam = self.params
            return lam * rng.weibull(k, size=size)
        if size is None:
            return self.params[0]
        return np.full(size, self.params[0])

    def sample_residual(self, rng, size=None):
        """Draw from the equilibrium excess distribution, density (1-G(t))/m.

        Exponential is its own excess law (memorylessness); the deterministic
        excess is uniform; Pareto and Weibull use exact inverse CDFs.
        """
        if self.kind == "exponential":
            return rng.exponential(1.0 / self.params[0], size=size)
        if self.kind == "deterministic":
            return self.params[0] * rng.random(size)
        u = rng.random(size)
        if self.kind == "pareto":
            xm, a = self.params
            m = a * xm / (a - 1.0)
            knee = (a - 1.0) / a  # excess CDF value at t = x_m
            u = np.asarray(u)
            body = u * m
            tail = xm * (a * (1.0 - u)) ** (-1.0 / (a - 1.0))
            out = np.where(u <= knee, body, tail)
            return out if size is not None else float(out)
        # weibull: excess CDF is the regularized lower incomplete gamma
        # gammainc(1/k, (t/lam)^k), inverted exactly
        k, lam = self.params
        out = lam * special.gammaincinv(1.0 / k, u) ** (1.0 / k)
        return out if size is not None else float(out)

    def to_dict(self):
        names = {
            "exponential": ("rate",),
            "pareto": ("scale", "tail"),
            "weibull": ("shape", "scale"),
            "deterministic": ("value",),
        }[self.kind]
        return {"kind": self.kind, "params": dict(zip(names, self.params))}

    @classmethod
    def from_dict(cls, d):
        try:
            kind = d["kind"]
            params = d["params"]
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed sojourn law record: {d!r}") from exc
        order = {
            "exponential": ("rate",),
            "pareto": ("scale", "tail"),
            "weibull": ("shape", "scale"),
            "deterministic": ("value",),
        }
        if kind not in order:
            raise ValidationError(f"unknown sojourn law kind {kind!r}")
        missing = [n for n in order[kind] if n not in params]
        if missing:
            raise ValidationError(f"sojourn law {kind!r} missing params {missing}")
        return cls(kind, tuple(float(params[n]) for n in order[kind]))


@dataclass(frozen=True)
class SemiMarkovSpec:
    """Finite-state semi-Markov specification.

    states: integer labels, must include 0.
    embedded_matrix: row-stochastic P with strictly positive entries
        (self-transitions are allowed and renew the holding clock).
    sojourn_laws: mapping state -> SojournLaw.  Keys may optionally be
        (i, j) pairs to make the holding time in i depend on the next
        state j; the stationary machinery requires state-only keys.

    State 0 may carry a Pareto law, in which case its tail index must lie
    in (1,2); all other states are restricted to the thin-tailed catalog.
    """

    states: tuple
    embedded_matrix: np.ndarray
    sojourn_laws: dict

    def __post_init__(self):
        states = tuple(int(s) for s in self.states)
        object.__setattr__(self, "states", states)
        if len(set(states)) != len(states):
            raise ValidationError("duplicate state labels")
        if 0 not in states:
            raise ValidationError("state space must contain the inactive state 0")
        p = np.asarray(self.embedded_matrix, dtype=float)
        object.__setattr__(self, "embedded_matrix", p)
        n = len(states)
        if p.shape != (n, n):
            raise ValidationError(
                f"embedded matrix shape {p.shape} does not match {n} states")
        if np.max(np.abs(p.sum(axis=1) - 1.0)) > 1e-12:
            raise ValidationError("embedded matrix rows must sum to 1 within 1e-12")
        if np.min(p) <= 0.0:
            raise ValidationError("embedded matrix entries must be strictly positive")
        for key, law in self.sojourn_laws.items():
            i = key[0] if isinstance(key, tuple) else key
            if i not in states or (isinstance(key, tuple) and key[1] not in states):
                raise ValidationError(f"sojourn law keyed by unknown state {key!r}")
            if not isinstance(law, SojournLaw):
                raise ValidationError(f"sojourn law for {key!r} is not a SojournLaw")
            if i == 0:
                if law.kind == "pareto" and not 1.0 < law.params[1] < 2.0:
                    raise ValidationError(
                        "state-0 pareto law needs tail index alpha in (1,2), "
                        f"got {law.params[1]}")
            elif law.kind == "pareto":
                raise ValidationError(
                    f"state {i} must be thin-tailed ({'/'.join(_THIN_TAILED_KINDS)}); "
                    "pareto is reserved for state 0")
        for i in states:
            if i not in self.sojourn_laws:
                missing = [j for j in states if (i, j) not in self.sojourn_laws]
                if missing:
                    raise ValidationError(
                        f"state {i} has no sojourn law (missing pairs {missing})")

    @property
    def n_states(self):
        return len(self.states)

    @property
    def pair_keyed(self):
        return any(isinstance(k, tuple) for k in self.sojourn_laws)

    def state_index(self, state):
        return self.states.index(state)

    def law(self, i, j=None):
        """Sojourn law in state i (optionally given the next state j)."""
        if j is not None and (i, j) in self.sojourn_laws:
            return self.sojourn_laws[(i, j)]
        try:
            return self.sojourn_laws[i]
        except KeyError:
            raise ValidationError(f"no sojourn law for state {i} -> {j}") from None

    @property
    def tail_index(self):
        """Tail index of the inactive state's law, or None if thin-tailed."""
        if self.pair_keyed:
            return None
        return self.law(0).tail_index

    def is_heavy_tailed(self):
        return self.tail_index is not None

    def mean_sojourns(self):
        """Mean holding time m_i per state, honoring optional pair keying."""
        out = np.empty(self.n_states)
        for a, i in enumerate(self.states):
            if not self.pair_keyed or i in self.sojourn_laws:
                out[a] = self.law(i).mean()
            else:
                row = self.embedded_matrix[a]
                out[a] = sum(row[b] * self.law(i, j).mean()
                             for b, j in enumerate(self.states))
        return out

    def to_dict(self):
        if self.pair_keyed:
            laws = {f"{i},{j}": law.to_dict()
                    for (i, j), law in self.sojourn_laws.items()}
        else:
            laws = {str(i): law.to_dict() for i, law in self.sojourn_laws.items()}
        return {
            "states": list(self.states),
            "embedded_matrix": self.embedded_matrix.tolist(),
            "sojourn_laws": laws,
        }

    @classmethod
    def from_dict(cls, d):
        for key in ("states", "embedded_matrix", "sojourn_laws"):
            if key not in d:
                raise ValidationError(f"semi-Markov spec missing field {key!r}")
        laws = {}
        for key, rec in d["sojourn_laws"].items():
            if "," in str(key):
                i, j = (int(part) for part in str(key).split(","))
                laws[(i, j)] = SojournLaw.from_dict(rec)
            else:
                laws[int(key)] = SojournLaw.from_dict(rec)
        return cls(tuple(d["states"]), np.asarray(d["embedded_matrix"], float), laws)


@dataclass(frozen=True)
class SemiMarkovPath:
    """Piecewise-constant sample path on [0, horizon].

    jump_times[k] is when the k-th sojourn starts (jump_times[0] == 0) and
    states[k] is the state held on [jump_times[k], jump_times[k+1]).  The
    embedded chain may self-transition, so consecutive states can repeat.
    """

    jump_times: np.ndarray
    states: np.ndarray
    horizon: float

    def __post_init__(self):
        jt = np.asarray(self.jump_times, dtype=float)
        st = np.asarray(self.states)
        object.__setattr__(self, "jump_times", jt)
        object.__setattr__(self, "states", st)
        if len(jt) != len(st) or len(jt) == 0:
            raise ValidationError("jump_times and states must be equal-length, nonempty")
        if jt[0] != 0.0:
            raise ValidationError("paths must start at time 0")
        if len(jt) > 1 and np.min(np.diff(jt)) <= 0:
            raise ValidationError("jump times must be strictly increasing")

    def state_at(self, t):
        """State value(s) at time(s) t, vectorized."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.jump_times, t, side="right") - 1
        return self.states[np.clip(idx, 0, len(self.states) - 1)]

    def occupation_fractions(self, state_labels):
        """Fraction of [0, horizon] spent in each listed state."""
        edges = np.append(self.jump_times, self.horizon)
        durations = np.diff(edges)
        out = np.zeros(len(state_labels))
        for a, s in enumerate(state_labels):
            out[a] = durations[self.states == s].sum()
        return out / self.horizon


def embedded_stationary(p, max_iter=200_000):
    """Stationary distribution pi of a row-stochastic matrix, pi P = pi.

    Solves the linear system directly and verifies the residual; falls back
    to damped power iteration if the solve is degenerate.  Raises
    ValidationError for a non-stochastic matrix and NumericError (with the
    iteration count) if no iterate meets the 1e-10 residual tolerance.
    """
    p = np.asarray(p, dtype=float)
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise ValidationError("transition matrix must be square")
    if np.min(p) < 0:
        raise ValidationError("transition matrix entries must be nonnegative")
    if np.max(np.abs(p.sum(axis=1) - 1.0)) > 1e-12:
        raise ValidationError("transition matrix rows must sum to 1 within 1e-12")
    n = p.shape[0]

    def _residual(v):
        return np.max(np.abs(v @ p - v))

    a = p.T - np.eye(n)
    a[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    try:
        pi = np.linalg.solve(a, b)
    except np.linalg.LinAlgError:
        pi = None
    if pi is not None and np.all(pi > 0) and _residual(pi) < 1e-10:
        return pi / pi.sum()

    # damped iteration kills the period-2 oscillation of e.g. [[0,1],[1,0]]
    pi = np.full(n, 1.0 / n)
    for it in range(1, max_iter + 1):
        nxt = 0.5 * (pi + pi @ p)
        nxt /= nxt.sum()
        if np.max(np.abs(nxt - pi)) < 1e-14:
            pi = nxt
            break
        pi = nxt
    else:
        it = max_iter
    if _residual(pi) >= 1e-10 or not np.all(pi > 0):
        raise NumericError(
            f"stationary distribution did not converge after {it} iterations "
            f"(residual {_residual(pi):.3e})")
    return pi


def mean_sojourn(law):
    """Mean holding time of a sojourn law (closed form)."""
    return law.mean()


def occupation_law(spec):
    """Long-run occupation distribution nu_i = pi_i m_i / sum_j pi_j m_j."""
    pi = embedded_stationary(spec.embedded_matrix)
    m = spec.mean_sojourns()
    w = pi * m
    return w / w.sum()


def sample_sojourn(law, rng, size=None):
    """Draw holding time(s) from a sojourn law."""
    return law.sample(rng, size=size)


def _stationary_init_idx(spec, n, rng):
    """Stationary (state index, residual) arrays for n paths."""
    if spec.pair_keyed:
        raise ValidationError(
            "stationary initialization requires state-keyed sojourn laws")
    nu = occupation_law(spec)
    idx = rng.choice(spec.n_states, p=nu, size=n)
    residuals = np.empty(n)
    for a, s in enumerate(spec.states):
        mask = idx == a
        cnt = int(mask.sum())
        if cnt:
            residuals[mask] = spec.law(s).sample_residual(rng, size=cnt)
    return idx, residuals


def stationary_init(spec, rng):
    """Initial (state, residual holding time) under the stationary law."""
    idx, residuals = _stationary_init_idx(spec, 1, rng)
    return int(spec.states[idx[0]]), float(residuals[0])


def stationary_init_batch(spec, n, rng):
    """Vectorized stationary initialization: (states, residuals) arrays."""
    idx, residuals = _stationary_init_idx(spec, n, rng)
    return np.asarray(spec.states)[idx], residuals


def simulate(spec, horizon, rng, stationary=True):
    """Sample one path on [0, horizon].

    With ``stationary`` the initial state comes from the occupation law and
    the first holding time from the equilibrium excess law, which makes all
    marginals time-shift invariant; otherwise the chain starts in state 0
    with a fresh sojourn.  On a jump the next state is drawn from the
    current row of P (self-transitions renew the clock) and the new state's
    law supplies the next holding time.
    """
    if not horizon > 0:
        raise ValidationError("horizon must be positive")
    cum_p = np.cumsum(spec.embedded_matrix, axis=1)
    if stationary:
        state, dur = stationary_init(spec, rng)  # rejects pair-keyed laws
        cur = spec.state_index(state)
        pending = None  # the residual leg's destination is drawn at its end
        t = float(dur)
    else:
        cur = spec.state_index(0)
        dur, pending = _next_leg(spec, cur, cum_p, rng)
        t = dur
    times = [0.0]
    state_idx = [cur]
    while t < horizon:
        if pending is None:
            pending = int(np.searchsorted(cum_p[cur], rng.random(), side="right"))
        cur = pending
        times.append(t)
        state_idx.append(cur)
        dur, pending = _next_leg(spec, cur, cum_p, rng)
        t += dur
    labels = np.asarray(spec.states)[np.array(state_idx)]
    return SemiMarkovPath(np.array(times), labels, float(horizon))


def _next_leg(spec, cur, cum_p, rng):
    """(holding time in state index ``cur``, index of the following state).

    The destination is drawn before the duration so that pair-keyed laws can
    condition the holding time on where the jump goes; for state-keyed laws
    the two draws are independent and the order is immaterial.
    """
    nxt = int(np.searchsorted(cum_p[cur], rng.random(), side="right"))
    state = spec.states[cur]
    if spec.pair_keyed and state not in spec.sojourn_laws:
        dur = spec.law(state, spec.states[nxt]).sample(rng)
    else:
        dur = spec.law(state).sample(rng)
    return float(dur), nxt


def hurst_from_alpha(alpha):
    """Map the inactive-period tail index to the Hurst exponent (3-alpha)/2."""
    if not 1.0 < alpha < 2.0:
        raise ValidationError(f"tail index must lie in (1,2), got {alpha}")
    return (3.0 - alpha) / 2.0


# ---------------------------------------------------------------------------
# vectorized ensemble engine
#
# All three entry points below run the same "rounds" loop: every live path
# holds arrays (current state index, sojourn start, sojourn end) and one
# round advances every path by exactly one jump, with holding times drawn
# law-by-law over the paths grouped by state.  Paths drop out once their
# sojourn passes the horizon.

def _start_batch(spec, n, rng, stationary):
    if stationary:
        idx, residuals = _stationary_init_idx(spec, n, rng)
        return idx.astype(np.int64), residuals
    idx = np.full(n, spec.state_index(0), dtype=np.int64)
    dur = spec.law(0).sample(rng, size=n)
    return idx, np.asarray(dur, float)


def _advance(spec, cum_p, idx, rng):
    """One embedded-chain step plus fresh holding times, vectorized.

    Next states are drawn row-by-row of P over the paths grouped by their
    current state; holding times law-by-law over the paths grouped by the
    state they just entered.
    """
    u = rng.random(len(idx))
    nxt = np.empty(len(idx), dtype=np.int64)
    for a in range(spec.n_states):
        mask = idx == a
        if mask.any():
            nxt[mask] = np.searchsorted(cum_p[a], u[mask], side="right")
    np.clip(nxt, 0, spec.n_states - 1, out=nxt)
    dur = np.empty(len(idx))
    for a, s in enumerate(spec.states):
        mask = nxt == a
        cnt = int(mask.sum())
        if cnt:
            dur[mask] = spec.law(s).sample(rng, size=cnt)
    return nxt, dur


def simulate_jump_stream(spec, n_paths, horizon, rng, stationary=True):
    """Merged, time-sorted jump stream of n_paths independent paths.

    Returns (initial state indices, jump times, from-indices, to-indices)
    with all jumps strictly inside (0, horizon).  Used by the event-driven
    market simulator, which only needs per-state counts.
    """
    if spec.pair_keyed and stationary:
        raise ValidationError("stationary ensembles require state-keyed laws")
    cum_p = np.cumsum(spec.embedded_matrix, axis=1)
    idx0, dur = _start_batch(spec, n_paths, rng, stationary)
    idx = idx0.copy()
    t_end = dur.copy()
    alive = t_end < horizon
    times, froms, tos = [], [], []
    idx, t_end = idx[alive], t_end[alive]
    while len(idx):
        nxt, dur = _advance(spec, cum_p, idx, rng)
        times.append(t_end.copy())
        froms.append(idx.copy())
        tos.append(nxt.copy())
        t_end = t_end + dur
        alive = t_end < horizon
        idx, t_end = nxt[alive], t_end[alive]
    if not times:
        empty = np.array([], dtype=np.int64)
        return idx0, np.array([]), empty, empty
    times = np.concatenate(times)
    froms = np.concatenate(froms)
    tos = np.concatenate(tos)
    order = np.argsort(times, kind="stable")
    return idx0, times[order], froms[order], tos[order]


def states_on_grid(spec, n_paths, grid, rng, stationary=True, sum_only=False,
                   group_ids=None, n_groups=None):
    """State values of n_paths independent paths at the given grid times.

    grid must be sorted, starting at 0.  Output shape depends on grouping:
    by default an (n_paths, len(grid)) matrix; with ``sum_only`` the
    per-grid-point sum over all paths (one vector); with ``group_ids`` (an
    integer label per path) the per-group sums, shape (n_groups, len(grid)).
    Grouping is how whole ensembles run as a single vector job.

    Each sojourn contributes its state value to the grid points it covers
    through a difference-array scatter (bincount), so total work is linear
    in the number of jumps rather than jumps times grid size.
    """
    grid = np.asarray(grid, dtype=float)
    horizon = grid[-1]
    g = len(grid)
    cum_p = np.cumsum(spec.embedded_matrix, axis=1)
    values = np.asarray(spec.states, dtype=float)

    if sum_only:
        if group_ids is not None:
            raise ValidationError("sum_only and group_ids are exclusive")
        rows, n_rows = np.zeros(n_paths, dtype=np.int64), 1
    elif group_ids is not None:
        rows = np.asarray(group_ids, dtype=np.int64)
        n_rows = int(rows.max()) + 1 if n_groups is None else n_groups
        if len(rows) != n_paths or rows.min() < 0 or rows.max() >= n_rows:
            raise ValidationError("group_ids must assign each path a row")
    else:
        rows, n_rows = np.arange(n_paths, dtype=np.int64), n_paths
    size = n_rows * (g + 1)
    diff = np.zeros(size)
    base = rows * (g + 1)

    step = grid[1] - grid[0] if g > 1 else 1.0
    uniform = g > 1 and np.max(np.abs(np.diff(grid) - step)) <= 1e-12 * step

    def _left_index(t):
        # first k with grid[k] >= t, clipped into the diff array; on the
        # uniform fast path a relative fuzz snaps near-exact hits onto the
        # grid the way searchsorted's exact comparison would
        if uniform:
            # cap before the int cast: heavy-tailed holding times produce
            # end points far beyond int64 range
            x = np.minimum(t * (1.0 / step), g + 1.0)
            k = np.ceil(x - 1e-12 * (1.0 + np.abs(x))).astype(np.int64)
            return np.clip(k, 0, g, out=k)
        return np.searchsorted(grid, t, side="left")

    idx, dur = _start_batch(spec, n_paths, rng, stationary)
    t0 = np.zeros(n_paths)
    t1 = dur
    while len(idx):
        k0 = _left_index(t0)
        k1 = _left_index(t1)
        vals = values[idx]
        diff += np.bincount(np.concatenate([base + k0, base + k1]),
                            weights=np.concatenate([vals, -vals]),
                            minlength=size)
        alive = t1 <= horizon
        if not np.any(alive):
            break
        idx, t0, base = idx[alive], t1[alive], base[alive]
        nxt, dur = _advance(spec, cum_p, idx, rng)
        idx = nxt
        t1 = t0 + dur
    out = np.cumsum(diff.reshape(n_rows, g + 1)[:, :g], axis=1)
    return out[0] if sum_only else out
