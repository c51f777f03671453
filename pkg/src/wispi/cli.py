"""Command-line entry points: `wispi run` and `wispi fit`.

Exit codes: 0 success, 1 configuration error, 2 computation error,
3 acceptance-threshold failure (only with --check).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

from .errors import ConfigError, FitError
from .harness import ExperimentConfig, fit_rate, run


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wispi",
        description="Experiment harness for weighted-space Bayesian inverse problems",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one experiment from a JSON config")
    run_p.add_argument("--config", required=True, help="path to the JSON experiment config")
    run_p.add_argument("--out", default=None, help="output directory (overrides config)")
    run_p.add_argument("--threads", type=int, default=1, help="worker threads for sweep points")
    run_p.add_argument("--spectral-cutoff", type=int, default=None,
                       help="retain only the lowest K graph eigenpairs in the prior")
    run_p.add_argument("--check", action="store_true",
                       help="exit with code 3 if any acceptance check fails")

    fit_p = sub.add_parser("fit", help="fit a log-log rate to two CSV columns")
    fit_p.add_argument("--csv", required=True, help="CSV file produced by `wispi run`")
    fit_p.add_argument("--xcol", required=True, help="column name for x")
    fit_p.add_argument("--ycol", required=True, help="column name for y")
    return parser


def _cmd_run(args) -> int:
    try:
        config = ExperimentConfig.from_file(args.config, output_dir=args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        bundle = run(config, threads=max(1, args.threads),
                     spectral_cutoff=args.spectral_cutoff)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # computation failed outright
        print(f"computation error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    point_errors = bundle.summary.get("errors") or []
    for message in point_errors:
        print(f"point error: {message}", file=sys.stderr)
    for name, ok in bundle.summary["checks"].items():
        print(f"[{'PASS' if ok else 'FAIL'}] {bundle.experiment}: {name}")
    print(f"wrote {bundle.csv_path} and {bundle.json_path}")
    if point_errors and not args.check:
        return 2
    if args.check and not bundle.passed:
        return 3
    return 0


def _cmd_fit(args) -> int:
    try:
        with open(args.csv, newline="", encoding="utf-8") as handle:
            reader = csv.DictReader(handle)
            xs, ys = [], []
            for row in reader:
                if args.xcol not in row or args.ycol not in row:
                    print(f"config error: columns {args.xcol}/{args.ycol} not in CSV",
                          file=sys.stderr)
                    return 1
                xs.append(float(row[args.xcol]))
                ys.append(float(row[args.ycol]))
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        fit = fit_rate(xs, ys)
    except FitError as exc:
        print(f"computation error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps({"slope": fit["slope"], "intercept": fit["intercept"],
                      "r_squared": fit["r_squared"], "points": len(xs)}, indent=2))
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    return _cmd_fit(args)


if __name__ == "__main__":
    sys.exit(main())
