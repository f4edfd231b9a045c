"""Command-line entry point.

Usage: ultradeco <experiment> --config <file> [--seed N] [--out DIR]
                 [--n-samples N] [--workers N]

Exit codes: 0 success, 2 bad config or invalid parameters, 3 numeric
guard tripped (e.g. truncation leakage), 4 a verifying experiment ran
but its comparison failed.
"""

from __future__ import annotations

import argparse
import sys

from .core import NumericGuardError
from .harness import EXPERIMENTS, ComparisonError, ConfigError, load_config, run_experiment


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ultradeco",
        description="Dephasing-driven transport experiments: quantum-to-classical "
                    "reduction checks, chain transport, arrival and waiting-time "
                    "statistics, growth-phase classification.",
    )
    sub = parser.add_subparsers(dest="experiment", metavar="experiment")
    sub.required = True
    for name in EXPERIMENTS:
        cmd = sub.add_parser(name, help=f"run the {name} experiment")
        cmd.add_argument("--config", required=True,
                         help="path to the experiment config (JSON)")
        cmd.add_argument("--seed", type=int, default=None,
                         help="master seed (overrides the config)")
        cmd.add_argument("--out", default=None,
                         help="output directory (overrides the config)")
        cmd.add_argument("--n-samples", type=int, default=None, dest="n_samples",
                         help="sample / trajectory count (overrides the config)")
        cmd.add_argument("--workers", type=int, default=None,
                         help="worker processes (overrides the config)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"experiment": args.experiment}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.n_samples is not None:
        overrides["n_samples"] = args.n_samples
    if args.workers is not None:
        overrides["workers"] = args.workers
    try:
        config = load_config(args.config, overrides)
        manifest = run_experiment(config)
    except ComparisonError as exc:
        print(f"comparison failed: {exc}", file=sys.stderr)
        return 4
    except NumericGuardError as exc:
        print(f"numeric guard: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"{config.experiment}: wrote {len(manifest.outputs)} artifact(s) "
          f"to {config.out_dir}")
    for key, value in manifest.summary.items():
        print(f"  {key}: {value}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
