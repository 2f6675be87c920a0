"""Command-line entry point: ``ekhmc run|sweep-gamma|describe-defaults``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, describe_defaults, parse_config
from .experiment import emit_gamma_sweep, run_experiment
from .inverse import THREADS_ENV


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ekhmc",
        description="Ensemble Kalman hybrid Monte Carlo experiments.",
        epilog=f"Set {THREADS_ENV} to cap the number of forward-model worker threads.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a key = value config file")
    run.add_argument("config", type=Path)
    run.add_argument("--output-dir", help="override output_dir from the config")
    run.add_argument("--figures", action="store_true", help="also render PNG figures")

    sweep = sub.add_parser("sweep-gamma", help="spectral gap of the linearised moment system against damping")
    sweep.add_argument("--min", dest="gmin", type=float, required=True)
    sweep.add_argument("--max", dest="gmax", type=float, required=True)
    sweep.add_argument("--steps", type=int, required=True)
    sweep.add_argument("--out", type=Path, required=True)
    sweep.add_argument("--figure", type=Path, help="optional PNG of the sweep")

    describe = sub.add_parser("describe-defaults", help="print the default config of a problem")
    describe.add_argument("problem")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        overrides = {}
        if args.output_dir is not None:
            overrides["output_dir"] = args.output_dir
        if args.figures:
            overrides["figures"] = True
        try:
            cfg = parse_config(args.config.read_text(), **overrides)
        except OSError as exc:
            print(f"error: cannot read {args.config}: {exc.strerror}", file=sys.stderr)
            return 1
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 1
        return run_experiment(cfg)
    if args.command == "sweep-gamma":
        return emit_gamma_sweep(args.gmin, args.gmax, args.steps, args.out, figure=args.figure)
    try:
        sys.stdout.write(describe_defaults(args.problem))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
