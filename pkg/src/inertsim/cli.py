"""Command-line entry point: run and validate experiment configs.

  inertsim run <config.json> [--seed N] [--threads K] [--out DIR]
  inertsim validate <config.json>
  inertsim version

Exit codes: 0 success, 2 configuration or invariant error, 3 numeric
failure during a run.  The output directory resolves as --out, then the
INERTSIM_OUT environment variable, then the config's output_dir.
"""

import argparse
import os
import sys

from . import __version__
from .config import parse_config
from .errors import NumericError, ValidationError
from .experiments import run_experiment

OUTPUT_ENV_VAR = "INERTSIM_OUT"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="inertsim",
        description="Seed-deterministic market-microstructure experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run an experiment config")
    run_p.add_argument("config", help="path to the JSON experiment config")
    run_p.add_argument("--seed", type=int, default=None,
                       help="override the config's master_seed")
    run_p.add_argument("--threads", type=int, default=1,
                       help="worker threads for ensemble members")
    run_p.add_argument("--out", default=None,
                       help=f"output directory (overrides ${OUTPUT_ENV_VAR} "
                            "and the config)")

    val_p = sub.add_parser("validate", help="check a config without running")
    val_p.add_argument("config", help="path to the JSON experiment config")

    sub.add_parser("version", help="print the package version")
    return parser


def _resolve_out_dir(args, cfg):
    if args.out is not None:
        return args.out
    env = os.environ.get(OUTPUT_ENV_VAR)
    if env:
        return env
    return cfg.output_dir


def main(argv=None):
    args = _build_parser().parse_args(argv)
    if args.command == "version":
        print(f"inertsim {__version__}")
        return EXIT_OK
    try:
        cfg = parse_config(args.config)
    except ValidationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "validate":
        results = cfg.check_invariants()
        for name, ok, msg in results:
            line = f"{'PASS' if ok else 'FAIL'}  {name}"
            if msg and not ok:
                line += f"  ({msg})"
            print(line)
        n_fail = sum(1 for _, ok, _ in results if not ok)
        print(f"{len(results) - n_fail}/{len(results)} invariants satisfied")
        return EXIT_OK if n_fail == 0 else EXIT_CONFIG

    if args.seed is not None:
        cfg.master_seed = args.seed
        cfg.raw = dict(cfg.raw, master_seed=args.seed)
    out_dir = _resolve_out_dir(args, cfg)
    try:
        manifest = run_experiment(cfg, out_dir, threads=max(1, args.threads))
    except ValidationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"wrote {out_dir} (kind={manifest['kind']}, "
          f"hash={manifest['config_hash'][:12]}, "
          f"wall={manifest['wall_time_s']}s)")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
