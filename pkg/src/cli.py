#!/usr/bin/env python3
"""
Command-line entry point.

Usage:
    python src/cli.py run --config configs/default.yaml --out data/results
    python src/cli.py summarize --out data/results
    python src/cli.py cdf --out data/results --group-by scheme,decoder
    python src/cli.py complexity --config configs/default.yaml
    python src/cli.py validate --trials 10000

Exit codes: 0 on success, 1 on runtime or validation failure, 2 on
configuration or infeasibility errors.
"""

import argparse
import logging
import os
import sys
from typing import List, Optional

import pandas as pd
import yaml

from access import InfeasibleAccessError
from harness import (
    DEFAULT_GROUP_BY,
    ExperimentSpec,
    ResultStore,
    complexity_tables,
    export_cdf,
    load_spec,
    run_experiment,
    summarize,
    with_overrides,
)
from validation import SUITES, validate_closed_forms

logger = logging.getLogger(__name__)

DEFAULT_CONFIG = os.path.join("configs", "default.yaml")
EXIT_OK, EXIT_FAILURE, EXIT_CONFIG = 0, 1, 2


def _split(value: Optional[str]) -> Optional[List[str]]:
    return None if value is None else [item.strip() for item in value.split(",") if item.strip()]


def _floats(value: Optional[str]) -> Optional[List[float]]:
    items = _split(value)
    return None if items is None else [float(item) for item in items]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Cell-free massive MIMO uplink access simulator")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    verbs = parser.add_subparsers(dest="verb", required=True)

    def experiment_flags(sub: argparse.ArgumentParser) -> None:
        sub.add_argument("--config", help=f"YAML configuration (default: {DEFAULT_CONFIG} if present)")
        sub.add_argument("--seed", type=int, help="base seed")
        sub.add_argument("--trials", type=int, help="Monte-Carlo coherence blocks per drop")
        sub.add_argument("--schemes", help="comma-separated pilot schemes")
        sub.add_argument("--theta", help="comma-separated power-control exponents")
        sub.add_argument("--repetitions", type=int, help="independent network drops")
        sub.add_argument("--workers", type=int, help="worker processes")

    run = verbs.add_parser("run", help="run an experiment and write results")
    experiment_flags(run)
    run.add_argument("--out", help="output directory")

    summary = verbs.add_parser("summarize", help="summary statistics of written results")
    summary.add_argument("--out", default=os.path.join("data", "results"), help="results directory")
    summary.add_argument("--group-by", default=",".join(DEFAULT_GROUP_BY))
    summary.add_argument("--per-drop", action="store_true", help="average per-drop statistics")

    cdf = verbs.add_parser("cdf", help="write empirical SE CDFs of written results")
    cdf.add_argument("--out", default=os.path.join("data", "results"), help="results directory")
    cdf.add_argument("--group-by", default=",".join(DEFAULT_GROUP_BY))

    complexity = verbs.add_parser("complexity", help="fronthaul and pilot-assignment complexity")
    experiment_flags(complexity)
    complexity.add_argument("--out", help="directory for complexity.csv")

    validate = verbs.add_parser("validate", help="closed-form vs Monte-Carlo validation")
    validate.add_argument("--seed", type=int, default=0, help="first drop seed")
    validate.add_argument("--seeds", type=int, default=5, help="number of drops")
    validate.add_argument("--trials", type=int, default=10_000)
    validate.add_argument("--suites", default=",".join(SUITES))
    validate.add_argument("--out", help="directory for validation.csv")
    return parser


def resolve_spec(args: argparse.Namespace) -> ExperimentSpec:
    """Config file (if any) with the command-line overrides applied."""
    path = args.config or (DEFAULT_CONFIG if os.path.exists(DEFAULT_CONFIG) else None)
    spec = load_spec(path) if path else ExperimentSpec()
    return with_overrides(
        spec,
        seed=args.seed,
        trials=args.trials,
        schemes=_split(args.schemes),
        theta_values=_floats(args.theta),
        repetitions=args.repetitions,
        workers=args.workers,
        output_dir=getattr(args, "out", None),
    )


def _log_summary(summary: pd.DataFrame) -> None:
    """Log one line per summary group."""
    keys = [c for c in summary.columns if c not in ("average", "percentile_5", "max_minus_min", "count")]
    for _, row in summary.iterrows():
        label = ", ".join(f"{key}={row[key]}" for key in keys)
        logger.info(f"  - {label}")
        logger.info(
            f"    - SE - Average: {row['average']:.3f}, 95%-likely: {row['percentile_5']:.3f}, "
            f"Max-Min: {row['max_minus_min']:.3f} bit/s/Hz ({int(row['count'])} UEs)"
        )


def cmd_run(args: argparse.Namespace) -> int:
    spec = resolve_spec(args)
    store = run_experiment(spec)
    if store.rows.empty:
        logger.error("All drops aborted; no results written")
        return EXIT_FAILURE
    store.write(spec.output_dir)
    _log_summary(summarize(store, per_drop=spec.per_drop_percentile))
    return EXIT_FAILURE if store.aborted else EXIT_OK


def cmd_summarize(args: argparse.Namespace) -> int:
    store = ResultStore.read(args.out)
    summary = summarize(store, _split(args.group_by), per_drop=args.per_drop)
    path = os.path.join(args.out, "summary.csv")
    summary.to_csv(path, index=False)
    logger.info(f"Summary saved: {path}")
    _log_summary(summary)
    return EXIT_OK


def cmd_cdf(args: argparse.Namespace) -> int:
    store = ResultStore.read(args.out)
    paths = export_cdf(store, _split(args.group_by), args.out)
    logger.info(f"CDF export completed: {len(paths)} file(s)")
    return EXIT_OK


def cmd_complexity(args: argparse.Namespace) -> int:
    spec = resolve_spec(args)
    online, fronthaul = complexity_tables(spec)
    print(online.to_string(index=False))
    totals = fronthaul.groupby("decoder")[["fronthaul_scalars", "complexity_mults"]].agg(["mean", "max"])
    print(totals.to_string())
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        fronthaul.to_csv(os.path.join(args.out, "complexity.csv"), index=False)
        online.to_csv(os.path.join(args.out, "online_complexity.csv"), index=False)
        logger.info(f"Complexity tables saved in {args.out}")
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    seeds = range(args.seed, args.seed + args.seeds)
    report = validate_closed_forms(seeds=seeds, trials=args.trials, suites=_split(args.suites))
    if not report.rows.empty:
        print(report.worst().to_string(index=False))
    if args.out and not report.rows.empty:
        os.makedirs(args.out, exist_ok=True)
        report.rows.to_csv(os.path.join(args.out, "validation.csv"), index=False)
    return EXIT_OK if report.passed else EXIT_FAILURE


COMMANDS = {
    "run": cmd_run,
    "summarize": cmd_summarize,
    "cdf": cmd_cdf,
    "complexity": cmd_complexity,
    "validate": cmd_validate,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    logger.info(f"Starting '{args.verb}'...")
    try:
        code = COMMANDS[args.verb](args)
    except (ValueError, TypeError, yaml.YAMLError, FileNotFoundError) as e:
        kind = "Infeasible access" if isinstance(e, InfeasibleAccessError) else "Configuration error"
        logger.error(f"{kind}: {e}", exc_info=True)
        return EXIT_CONFIG
    except Exception as e:
        logger.error(f"'{args.verb}' failed: {e}", exc_info=True)
        return EXIT_FAILURE

    if code == EXIT_OK:
        logger.info(f"'{args.verb}' completed successfully!")
    else:
        logger.error(f"'{args.verb}' failed")
    return code


if __name__ == "__main__":
    sys.exit(main())
