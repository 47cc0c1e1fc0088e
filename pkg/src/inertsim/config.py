"""Experiment configuration: a single JSON file with nested sections.

Schema (sections marked * are required for the kinds listed):

  kind           one of fluid, feedback, no_feedback, fbm, fou, hurst,
                 convergence, fracvol, randcoeff
  master_seed    integer, required (runs never seed from the clock)
  ensemble_size  integer >= 1 (default 1)
  output_dir     string (overridable by $INERTSIM_OUT and --out)
  semi_markov*   states / embedded_matrix / sojourn_laws
                 (fluid feedback no_feedback fou hurst convergence)
  rates*         f / g_plus / g_minus / h_plus / h_minus / price_range
                 (fluid feedback fou convergence)
  market         n_agents / time_scale / horizon / grid_step / n_grid
                 (feedback* no_feedback* hurst* convergence seeds sizes)
  fbm*           hurst / n_grid / horizon                 (fbm)
  fou*           sigma / hurst                            (fou)
  estimator      j_min / j_max                            (hurst)
  convergence*   n_agents_list / seeds_per_size           (convergence)
  fracvol*       time_scale / hurst / lam_plus / lam_minus / n_grid (fracvol)
  randcoeff*     n_steps / s0 / gt_values / gamma_std     (randcoeff)
  psi            drift / vol (no_feedback only; omit for Psi identically 1)

Sojourn laws and scalar rate functions are tagged records {kind, params};
see SojournLaw.from_dict and ScalarFunction.from_dict for the catalogs.
"""

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import semi_markov as sm
from .errors import ValidationError
from .market import DEFAULT_GRID_STEP, RateSpec, ScalarFunction

KINDS = ("fluid", "feedback", "no_feedback", "fbm", "fou", "hurst",
         "convergence", "fracvol", "randcoeff")

_REQUIRED_SECTIONS = {
    "fluid": ("semi_markov", "rates"),
    "feedback": ("semi_markov", "rates", "market"),
    "no_feedback": ("semi_markov", "market"),
    "fbm": ("fbm",),
    "fou": ("semi_markov", "rates", "fou"),
    "hurst": ("semi_markov", "market"),
    "convergence": ("semi_markov", "rates", "convergence"),
    "fracvol": ("fracvol",),
    "randcoeff": ("randcoeff",),
}


def _get(d, key, path, expect=None):
    if key not in d:
        raise ValidationError(f"config field '{path}{key}' is missing")
    v = d[key]
    if expect is not None and not isinstance(v, expect):
        names = expect.__name__ if isinstance(expect, type) else \
            "/".join(t.__name__ for t in expect)
        raise ValidationError(f"config field '{path}{key}' must be {names}")
    return v


@dataclass
class ExperimentConfig:
    """Parsed, structurally valid experiment description.

    ``raw`` keeps the original mapping for canonical hashing; nested model
    objects are built lazily by the checks so that `validate` can report
    every invariant instead of stopping at the first construction error.
    """

    kind: str
    master_seed: int
    ensemble_size: int
    output_dir: str
    raw: dict

    @property
    def semi_markov_dict(self):
        return self.raw.get("semi_markov")

    def semi_markov(self):
        return sm.SemiMarkovSpec.from_dict(_get(self.raw, "semi_markov", ""))

    def rates(self):
        return RateSpec.from_dict(_get(self.raw, "rates", ""))

    def section(self, name, default=None):
        return self.raw.get(name, {} if default is None else default)

    def canonical_json(self):
        return json.dumps(self.raw, sort_keys=True, separators=(",", ":"))

    def config_hash(self):
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    # ------------------------------------------------------------------
    def check_invariants(self):
        """Run every applicable invariant check without simulating.

        Returns a list of (invariant name, passed, detail) triples; `run`
        refuses to start unless all pass.
        """
        results = []

        def check(name, fn):
            try:
                fn()
                results.append((name, True, ""))
            except ValidationError as exc:
                results.append((name, False, str(exc)))
            except Exception as exc:  # malformed structure inside a section
                results.append((name, False, f"{type(exc).__name__}: {exc}"))

        check("ensemble size >= 1", lambda: self._check_ensemble())
        if "semi_markov" in self.raw:
            d = self.raw["semi_markov"]
            check("embedded matrix row-stochastic",
                  lambda: _check_rows_stochastic(d))
            check("embedded matrix strictly positive",
                  lambda: _check_matrix_positive(d))
            check("state 0 present", lambda: _check_state0(d))
            check("sojourn law parameters valid", lambda: _check_laws_parse(d))
            check("state-0 tail index alpha in (1,2)",
                  lambda: _check_alpha_range(d))
            check("non-zero states thin-tailed",
                  lambda: _check_thin_tails(d))
            check("semi-Markov spec constructs", self.semi_markov)
        if "rates" in self.raw:
            check("rate functions parse", lambda: self._check_rate_functions())
            check("rates nonnegative and bounded on price range", self.rates)
            if "semi_markov" in self.raw:
                check("mood sensitivity non-degenerate (f(0) != occupation mean of f)",
                      lambda: self.rates().validate_against(self.semi_markov()))
        if "market" in self.raw:
            check("market sizes (n_agents >= 1, time_scale >= 1, horizon > 0)",
                  lambda: self._check_market())
        if self.kind == "fbm":
            check("fbm parameters (hurst in (0,1], n_grid >= 2)",
                  lambda: self._check_fbm())
        if self.kind == "fou":
            check("fou parameters (sigma >= 0, hurst in [1/2,1))",
                  lambda: self._check_fou())
        if self.kind == "hurst":
            check("estimator octave range", lambda: self._check_estimator())
        if self.kind == "convergence":
            check("convergence sizes (>= 3 increasing, seeds >= 3)",
                  lambda: self._check_convergence())
        if self.kind == "fracvol":
            check("fracvol parameters (time_scale >= 1, hurst in (1/2,1))",
                  lambda: self._check_fracvol())
        if self.kind == "randcoeff":
            check("randcoeff parameters (n_steps >= 1, gt_values nonempty)",
                  lambda: self._check_randcoeff())
        return results

    def require_valid(self):
        failed = [(n, msg) for n, ok, msg in self.check_invariants() if not ok]
        if failed:
            name, msg = failed[0]
            raise ValidationError(
                f"invariant '{name}' violated" + (f": {msg}" if msg else ""))

    # ------------------------------------------------------------------
    def _check_ensemble(self):
        if self.ensemble_size < 1:
            raise ValidationError(f"ensemble_size must be >= 1, got {self.ensemble_size}")

    def _check_rate_functions(self):
        d = self.raw["rates"]
        if "f" not in d or not d["f"]:
            raise ValidationError("rates.f must map states to sensitivities")
        for name in ("g_plus", "g_minus", "h_plus", "h_minus"):
            if name in d:
                ScalarFunction.from_dict(d[name])

    def _check_market(self):
        m = self.raw["market"]
        n = _get(m, "n_agents", "market.", int)
        if n < 1:
            raise ValidationError("market.n_agents must be >= 1")
        t = float(m.get("time_scale", 1.0))
        if t < 1.0:
            raise ValidationError("market.time_scale must be >= 1")
        if not float(m.get("horizon", 1.0)) > 0:
            raise ValidationError("market.horizon must be positive")

    def _check_fbm(self):
        f = self.raw["fbm"]
        h = float(_get(f, "hurst", "fbm."))
        if not 0.0 < h <= 1.0:
            raise ValidationError(f"fbm.hurst must lie in (0,1], got {h}")
        if int(_get(f, "n_grid", "fbm.")) < 2:
            raise ValidationError("fbm.n_grid must be >= 2")

    def _check_fou(self):
        f = self.raw["fou"]
        if float(_get(f, "sigma", "fou.")) < 0:
            raise ValidationError("fou.sigma must be >= 0")
        h = float(_get(f, "hurst", "fou."))
        if not 0.5 <= h < 1.0:
            raise ValidationError(f"fou.hurst must lie in [1/2,1), got {h}")

    def _check_estimator(self):
        e = self.raw.get("estimator", {})
        j_min = int(e.get("j_min", 3))
        n_grid = int(self.raw.get("market", {}).get("n_grid", 8192))
        j_max = int(e.get("j_max", max(j_min + 1, n_grid.bit_length() - 5)))
        if not 1 <= j_min < j_max:
            raise ValidationError(f"need 1 <= j_min < j_max, got [{j_min}, {j_max}]")
        if n_grid + 1 < 2 ** (j_max + 2):
            raise ValidationError(
                f"market.n_grid={n_grid} too small for octave {j_max}")

    def _check_convergence(self):
        c = self.raw["convergence"]
        sizes = _get(c, "n_agents_list", "convergence.", list)
        if len(sizes) < 3 or any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ValidationError(
                "convergence.n_agents_list must be >= 3 increasing sizes")
        if int(_get(c, "seeds_per_size", "convergence.")) < 3:
            raise ValidationError("convergence.seeds_per_size must be >= 3")

    def _check_fracvol(self):
        f = self.raw["fracvol"]
        if float(_get(f, "time_scale", "fracvol.")) < 1:
            raise ValidationError("fracvol.time_scale must be >= 1")
        h = float(_get(f, "hurst", "fracvol."))
        if not 0.5 < h < 1.0:
            raise ValidationError(f"fracvol.hurst must lie in (1/2,1), got {h}")
        ScalarFunction.from_dict(_get(f, "lam_plus", "fracvol."))
        ScalarFunction.from_dict(_get(f, "lam_minus", "fracvol."))

    def _check_randcoeff(self):
        r = self.raw["randcoeff"]
        if int(_get(r, "n_steps", "randcoeff.")) < 1:
            raise ValidationError("randcoeff.n_steps must be >= 1")
        if not _get(r, "gt_values", "randcoeff.", list):
            raise ValidationError("randcoeff.gt_values must be nonempty")
        if float(r.get("gamma_std", 1.0)) < 0:
            raise ValidationError("randcoeff.gamma_std must be >= 0")


def _check_rows_stochastic(d):
    p = np.asarray(_get(d, "embedded_matrix", "semi_markov."), dtype=float)
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise ValidationError("semi_markov.embedded_matrix must be square")
    if np.max(np.abs(p.sum(axis=1) - 1.0)) > 1e-12:
        raise ValidationError("embedded matrix rows must sum to 1 within 1e-12")


def _check_matrix_positive(d):
    p = np.asarray(_get(d, "embedded_matrix", "semi_markov."), dtype=float)
    if np.min(p) <= 0:
        raise ValidationError("embedded matrix entries must be strictly positive")


def _check_state0(d):
    if 0 not in [int(s) for s in _get(d, "states", "semi_markov.", list)]:
        raise ValidationError("state space must contain the inactive state 0")


def _iter_laws(d):
    for key, rec in _get(d, "sojourn_laws", "semi_markov.", dict).items():
        state = int(str(key).split(",")[0])
        yield state, rec


def _check_laws_parse(d):
    for _, rec in _iter_laws(d):
        sm.SojournLaw.from_dict(rec)


def _check_alpha_range(d):
    for state, rec in _iter_laws(d):
        if state == 0 and rec.get("kind") == "pareto":
            tail = float(rec.get("params", {}).get("tail", 0.0))
            if not 1.0 < tail < 2.0:
                raise ValidationError(
                    f"state-0 tail index alpha must lie in (1,2), got {tail}")


def _check_thin_tails(d):
    for state, rec in _iter_laws(d):
        if state != 0 and rec.get("kind") == "pareto":
            raise ValidationError(
                f"state {state} must be thin-tailed; pareto is reserved for state 0")
        if rec.get("kind") == "weibull":
            shape = float(rec.get("params", {}).get("shape", 0.0))
            if shape < 1.0:
                raise ValidationError(
                    f"weibull shape must be >= 1 (thin-tailed catalog), got {shape}")


def parse_config(source):
    """Load and structurally validate a config from a path or a dict.

    JSON syntax errors surface with their line and column; missing or
    mistyped fields name their dotted path.
    """
    if isinstance(source, dict):
        raw = source
    else:
        with open(source) as fh:
            text = fh.read()
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(
                f"{source}: JSON syntax error at line {exc.lineno}, "
                f"column {exc.colno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ValidationError("config must be a JSON object")
    kind = _get(raw, "kind", "", str)
    if kind not in KINDS:
        raise ValidationError(
            f"config field 'kind' must be one of {', '.join(KINDS)}; got {kind!r}")
    seed = _get(raw, "master_seed", "", int)
    for section in _REQUIRED_SECTIONS[kind]:
        _get(raw, section, "", dict)
    ensemble = raw.get("ensemble_size", 1)
    if not isinstance(ensemble, int):
        raise ValidationError("config field 'ensemble_size' must be int")
    output_dir = raw.get("output_dir", "inertsim_out")
    if not isinstance(output_dir, str):
        raise ValidationError("config field 'output_dir' must be a string")
    return ExperimentConfig(kind=kind, master_seed=seed, ensemble_size=ensemble,
                            output_dir=output_dir, raw=raw)
