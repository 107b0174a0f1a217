"""Command-line entry point: run, sweep, validate, export."""

from __future__ import annotations

import argparse
import json
import sys

from gradlens import __version__
from gradlens.config import load_config, load_grid
from gradlens.errors import GradlensError
from gradlens.runner import (
    VALIDATION_SUITES,
    export_records,
    run,
    sweep,
    validate_suite,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gradlens",
        description="Multi-task policy-gradient training with gradient-norm diagnostics.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one experiment from a config file")
    p_run.add_argument("--config", required=True, help="TOML experiment config")
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_run.add_argument("--out", default=None, help="output directory (overrides GRADLENS_OUT)")

    p_sweep = sub.add_parser("sweep", help="temperature sweep vs uniform baseline")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--grid", required=True, help="TOML grid file")
    p_sweep.add_argument("--out", default=None)

    p_val = sub.add_parser("validate", help="run a property-check suite")
    p_val.add_argument("--suite", required=True, choices=VALIDATION_SUITES)

    p_exp = sub.add_parser("export", help="re-emit a run's records as csv or jsonl")
    p_exp.add_argument("--run", required=True, help="run directory")
    p_exp.add_argument("--format", required=True, choices=("csv", "jsonl"))
    p_exp.add_argument("--out", default=None, help="output file (default: stdout)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            config = load_config(args.config, seed_override=args.seed)
            manifest = run(config, out_dir=args.out)
            print(json.dumps(manifest.to_dict(), indent=2))
        elif args.command == "sweep":
            config = load_config(args.config)
            grid = load_grid(args.grid)
            summary = sweep(config, grid, out_root=args.out)
            print(json.dumps(summary, indent=2))
        elif args.command == "validate":
            report = validate_suite(args.suite)
            print(json.dumps(report, indent=2))
            return 0
        elif args.command == "export":
            text = export_records(args.run, args.format)
            if args.out:
                with open(args.out, "w", newline="") as fh:
                    fh.write(text)
            else:
                sys.stdout.write(text)
    except GradlensError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
