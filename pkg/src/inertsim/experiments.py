"""Config-driven experiment runners.

Each runner takes a parsed ExperimentConfig, simulates deterministically
from the master seed (member k of an ensemble draws from the child stream
(master_seed, k), so results do not depend on worker count or dispatch
order), writes per-run CSVs plus an ensemble summary, and returns the
manifest record.  Wall time appears only in the manifest; the CSV data
artifacts are byte-identical across reruns.
"""

import math
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, market as mk, semi_markov as sm, stats as st
from .errors import ValidationError
from .fractional import GridSeries, generate_fbm, write_csv
from .market import DEFAULT_GRID_STEP
from .rng import child_rng, master_rng


def _ensemble_map(fn, n, threads):
    if threads <= 1:
        return [fn(k) for k in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n)))


def write_summary(series_list, fname):
    """Per-grid-point mean, variance and quantiles of an ensemble."""
    values = np.stack([s.values for s in series_list])
    times = series_list[0].times
    mean = values.mean(axis=0)
    var = values.var(axis=0, ddof=1) if len(series_list) > 1 else np.zeros_like(mean)
    q05, q50, q95 = np.quantile(values, [0.05, 0.5, 0.95], axis=0)
    with open(fname, "w") as fh:
        fh.write("time,mean,var,q05,q50,q95\n")
        for row in zip(times, mean, var, q05, q50, q95):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _market_section(cfg):
    m = cfg.section("market")
    return {
        "n_agents": int(m.get("n_agents", 1000)),
        "time_scale": float(m.get("time_scale", 1.0)),
        "horizon": float(m.get("horizon", 1.0)),
        "grid_step": float(m.get("grid_step", DEFAULT_GRID_STEP)),
        "n_grid": int(m.get("n_grid", 8192)),
    }


def _fluid_for(cfg, horizon, grid_step):
    spec = cfg.semi_markov()
    rates = cfg.rates()
    nu = sm.occupation_law(spec)
    mr = mk.mean_rates(rates, nu, spec.states)
    return spec, rates, mk.solve_fluid(mr, 0.0, horizon, grid_step)


def run_experiment(cfg, out_dir, threads=1):
    """Dispatch one experiment; returns the manifest dict (also written)."""
    cfg.require_valid()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    runner = _RUNNERS[cfg.kind]
    derived = runner(cfg, out, threads)
    manifest = {
        "tool": "inertsim",
        "version": __version__,
        "kind": cfg.kind,
        "config_hash": cfg.config_hash(),
        "master_seed": cfg.master_seed,
        "ensemble_size": cfg.ensemble_size,
        "n_agents": None,
        "time_scale": None,
        "alpha": None,
        "hurst": None,
        "sigma_estimate": None,
        "event_count": None,
        "convergence_slope": None,
    }
    manifest.update(derived)
    manifest["wall_time_s"] = round(time.perf_counter() - started, 3)
    _write_manifest(out / "manifest.json", manifest)
    return manifest


def _write_manifest(fname, manifest):
    import json
    with open(fname, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# runners

def _run_fbm(cfg, out, threads):
    f = cfg.section("fbm")
    hurst = float(f["hurst"])
    n_grid = int(f["n_grid"])
    horizon = float(f.get("horizon", 1.0))

    def member(k):
        return generate_fbm(hurst, n_grid, horizon, child_rng(cfg.master_seed, k))

    paths = _ensemble_map(member, cfg.ensemble_size, threads)
    for k, p in enumerate(paths):
        write_csv(p, out / f"path_{k:04d}.csv")
    write_summary([p.as_series() for p in paths], out / "summary.csv")
    return {"hurst": hurst}


def _run_fluid(cfg, out, threads):
    spec, rates, fluid = _fluid_for(cfg, *_fluid_grid(cfg))
    fluid.write_csv(out / "fluid.csv")
    return {"alpha": spec.tail_index,
            "sigma_estimate": None,
            "hurst": None}


def _fluid_grid(cfg):
    m = _market_section(cfg)
    return m["horizon"], m["grid_step"]


def _run_feedback(cfg, out, threads):
    spec = cfg.semi_markov()
    rates = cfg.rates()
    m = _market_section(cfg)
    config = mk.MarketConfig(n_agents=m["n_agents"], semi_markov=spec, rates=rates,
                             time_scale=m["time_scale"], horizon=m["horizon"],
                             grid_step=m["grid_step"])

    def member(k):
        return mk.simulate_feedback(config, child_rng(cfg.master_seed, k))

    paths = _ensemble_map(member, cfg.ensemble_size, threads)
    grids = []
    for k, p in enumerate(paths):
        p.write_csv(out / f"events_{k:04d}.csv")
        grids.append(p.grid(m["grid_step"]))
        write_csv(grids[-1], out / f"grid_{k:04d}.csv")
    write_summary(grids, out / "summary.csv")
    return {"n_agents": m["n_agents"], "time_scale": m["time_scale"],
            "alpha": spec.tail_index,
            "event_count": int(sum(p.event_count for p in paths))}


def _run_no_feedback(cfg, out, threads):
    spec = cfg.semi_markov()
    m = _market_section(cfg)
    psi_cfg = cfg.section("psi", {})

    def member(k):
        rng = child_rng(cfg.master_seed, k)
        psi = None
        if psi_cfg:
            psi = mk.generate_psi(float(psi_cfg.get("drift", 0.0)),
                                  float(psi_cfg.get("vol", 0.0)),
                                  m["n_grid"], m["horizon"], rng)
        return mk.simulate_no_feedback(m["n_agents"], m["time_scale"], spec, rng,
                                       horizon=m["horizon"], n_grid=m["n_grid"],
                                       psi=psi)

    grids = _ensemble_map(member, cfg.ensemble_size, threads)
    for k, g in enumerate(grids):
        write_csv(g, out / f"grid_{k:04d}.csv")
    write_summary(grids, out / "summary.csv")
    nu = sm.occupation_law(spec)
    return {"n_agents": m["n_agents"], "time_scale": m["time_scale"],
            "alpha": spec.tail_index,
            "sigma_estimate": None,
            "hurst": None,
            "mu": float(nu @ np.asarray(spec.states, float))}


def _run_hurst(cfg, out, threads):
    """No-feedback fluctuation ensemble and its wavelet Hurst estimates.

    The whole ensemble runs as one grouped vector job from the master
    stream (see market.no_feedback_ensemble), which makes this experiment
    independent of thread count by construction.
    """
    spec = cfg.semi_markov()
    m = _market_section(cfg)
    est = cfg.section("estimator", {})
    alpha = spec.tail_index
    hurst = sm.hurst_from_alpha(alpha) if alpha is not None else 0.5
    j_min = int(est.get("j_min", 3))
    j_max = int(est.get("j_max", max(j_min + 1, m["n_grid"].bit_length() - 5)))

    drift = mk.no_feedback_drift(spec, horizon=m["horizon"], n_grid=m["n_grid"])
    paths = mk.no_feedback_ensemble(cfg.ensemble_size, m["n_agents"],
                                    m["time_scale"], spec,
                                    master_rng(cfg.master_seed),
                                    horizon=m["horizon"], n_grid=m["n_grid"])
    estimates, finals = [], []
    for p in paths:
        fl = mk.rescaled_fluctuation(p, drift, m["n_agents"], m["time_scale"], hurst)
        estimates.append(st.hurst_wavelet(fl, j_min=j_min, j_max=j_max))
        finals.append(fl.value_at(min(1.0, fl.horizon)))
    with open(out / "estimates.csv", "w") as fh:
        fh.write("member,method,h,stderr,j_min,j_max,n\n")
        for k, e in enumerate(estimates):
            fh.write(f"{k},{e.method},{e.h!r},{e.slope_stderr!r},"
                     f"{e.scales[0]},{e.scales[1]},{m['n_grid'] + 1}\n")
    hs = np.array([e.h for e in estimates])
    return {"n_agents": m["n_agents"], "time_scale": m["time_scale"],
            "alpha": alpha, "hurst": hurst,
            "median_h": float(np.median(hs)),
            "sigma_estimate": float(np.std(np.asarray(finals), ddof=1))}


def _run_fou(cfg, out, threads):
    spec, rates, fluid = _fluid_for(cfg, *_fluid_grid(cfg))
    f = cfg.section("fou")
    sigma = float(f["sigma"])
    hurst = float(f["hurst"])

    def member(k):
        return mk.simulate_fou_limit(fluid, rates, sigma, hurst,
                                     child_rng(cfg.master_seed, k))

    paths = _ensemble_map(member, cfg.ensemble_size, threads)
    for k, p in enumerate(paths):
        write_csv(p, out / f"path_{k:04d}.csv")
    write_summary(paths, out / "summary.csv")
    return {"alpha": spec.tail_index, "hurst": hurst, "sigma_estimate": sigma}


def _run_convergence(cfg, out, threads):
    spec, rates, fluid = _fluid_for(cfg, *_fluid_grid(cfg))
    c = cfg.section("convergence")
    sizes = [int(n) for n in c["n_agents_list"]]
    seeds = int(c["seeds_per_size"])
    m = _market_section(cfg)

    def member(job):
        i, k = divmod(job, seeds)
        config = mk.MarketConfig(n_agents=sizes[i], semi_markov=spec, rates=rates,
                                 time_scale=m["time_scale"], horizon=m["horizon"],
                                 grid_step=m["grid_step"])
        path = mk.simulate_feedback(config, child_rng((cfg.master_seed, sizes[i]), k))
        return st.sup_error(path.grid(m["grid_step"]), fluid.s)

    errs = _ensemble_map(member, len(sizes) * seeds, threads)
    medians = [float(np.median(errs[i * seeds:(i + 1) * seeds]))
               for i in range(len(sizes))]
    with open(out / "convergence.csv", "w") as fh:
        fh.write("n_agents,median_sup_error\n")
        for n, e in zip(sizes, medians):
            fh.write(f"{n},{e!r}\n")
    slope, stderr = st.convergence_slope(sizes, medians)
    return {"alpha": spec.tail_index, "time_scale": m["time_scale"],
            "convergence_slope": float(slope),
            "convergence_slope_stderr": float(stderr)}


def _run_fracvol(cfg, out, threads):
    f = cfg.section("fracvol")
    lam_plus = mk.ScalarFunction.from_dict(f["lam_plus"])
    lam_minus = mk.ScalarFunction.from_dict(f["lam_minus"])
    t_scale = float(f["time_scale"])
    hurst = float(f["hurst"])
    n_grid = int(f.get("n_grid", 1024))
    horizon = float(f.get("horizon", 1.0))

    def member(k):
        return mk.simulate_fractional_vol(lam_plus, lam_minus, t_scale,
                                          child_rng(cfg.master_seed, k),
                                          hurst=hurst, n_grid=n_grid,
                                          horizon=horizon)

    paths = _ensemble_map(member, cfg.ensemble_size, threads)
    for k, p in enumerate(paths):
        write_csv(p, out / f"path_{k:04d}.csv")
    write_summary(paths, out / "summary.csv")
    return {"time_scale": t_scale, "hurst": hurst}


def _run_randcoeff(cfg, out, threads):
    r = cfg.section("randcoeff")
    n_steps = int(r["n_steps"])
    s0 = float(r.get("s0", 0.0))
    gt_values = np.asarray(r["gt_values"], dtype=float)
    gamma_std = float(r.get("gamma_std", 1.0))

    def sampler(rng, n):
        return gt_values[rng.integers(0, len(gt_values), size=n)], \
            gamma_std * rng.standard_normal(n)

    def member(k):
        vals = mk.simulate_random_coeff(n_steps, sampler, s0,
                                        child_rng(cfg.master_seed, k))
        return GridSeries(1.0, vals, "random-coefficient price")

    paths = _ensemble_map(member, cfg.ensemble_size, threads)
    for k, p in enumerate(paths):
        write_csv(p, out / f"path_{k:04d}.csv")
    write_summary(paths, out / "summary.csv")
    contraction = float(np.mean(np.log(np.abs(1.0 + gt_values))))
    return {"log_contraction_rate": contraction}


_RUNNERS = {
    "fbm": _run_fbm,
    "fluid": _run_fluid,
    "feedback": _run_feedback,
    "no_feedback": _run_no_feedback,
    "hurst": _run_hurst,
    "fou": _run_fou,
    "convergence": _run_convergence,
    "fracvol": _run_fracvol,
    "randcoeff": _run_randcoeff,
}
