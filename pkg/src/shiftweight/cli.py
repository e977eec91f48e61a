"""Command-line entry point.

Subcommands: ``inject`` (write shifted splits), ``run`` (fill the report
CSV), ``rank`` (Friedman/Nemenyi tables), ``toy`` (the motivating
one-relevant-covariate example), and ``estimate`` (one importance vector
for a train/test CSV pair).  A JSON config file carries the experiment
definition; command-line flags override individual fields.

Exit codes: 0 success, 1 usage, 2 data error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from .core import RngStream, ShiftWeightError, read_dataset_csv
from .estimators import (
    EstimatorSpec,
    MemoryBudgetError,
    Method,
    estimate,
    write_importance_csv,
)
from .kernels import KernelConfig, KernelFamily
from .learners import SingularSystemError
from .phi import PhiMode
from .solver import (
    DegenerateBasisError,
    InfeasibleError,
    NonPsdError,
    NotConvergedError,
)
from .experiment import (
    DatasetConfig,
    ExperimentConfig,
    inject_command,
    rank_command,
    run_command,
    toy_table,
    write_toy_csv,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_SOLVER = 3

_SOLVER_ERRORS = (
    NotConvergedError,
    NonPsdError,
    InfeasibleError,
    DegenerateBasisError,
    SingularSystemError,
    MemoryBudgetError,
)

WORKERS_ENV = "SHIFTWEIGHT_WORKERS"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _int_list(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part]


def _str_list(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def build_parser() -> _Parser:
    parser = _Parser(prog="shiftweight", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config JSON file")
    common.add_argument("--output", help="override output directory")
    common.add_argument("--seeds", type=_int_list, help="comma-separated seeds")
    common.add_argument("--variants", type=int, help="test variants per seed")
    common.add_argument("--test-fraction", type=float, dest="test_fraction")
    common.add_argument(
        "--no-standardize",
        action="store_true",
        help="skip train-fitted z-scoring before the estimators",
    )

    p_inject = sub.add_parser("inject", parents=[common], help="write shifted splits")
    p_inject.add_argument("--dataset", help="source CSV (alternative to --config)")
    p_inject.add_argument("--name", help="dataset name (default: file stem)")
    p_inject.add_argument("--task", choices=["classification", "regression"])
    p_inject.add_argument("--class-count", type=int, dest="class_count")
    p_inject.add_argument("--min-separation", type=float, dest="min_separation")
    p_inject.add_argument("--steepness", type=float, help="regression sigmoid steepness")

    p_run = sub.add_parser("run", parents=[common], help="fill the report CSV")
    p_run.add_argument("--methods", type=_str_list, help="comma-separated methods")
    p_run.add_argument("--phi-modes", type=_str_list, dest="phi_modes")
    p_run.add_argument("--folds", type=int)
    p_run.add_argument(
        "--workers",
        type=int,
        help=f"parallel workers (default: ${WORKERS_ENV} or 1)",
    )
    p_run.add_argument("--report", help="report CSV path (default: <output>/report.csv)")

    p_rank = sub.add_parser("rank", help="Friedman/Nemenyi ranking tables")
    p_rank.add_argument("--report", required=True, help="report CSV from `run`")
    p_rank.add_argument("--output", required=True, help="directory for ranking files")
    p_rank.add_argument("--phi-modes", type=_str_list, dest="phi_modes")

    p_toy = sub.add_parser("toy", help="one-relevant-covariate toy experiment")
    p_toy.add_argument("--seed", type=int, default=2032)
    p_toy.add_argument("--shift", type=float, default=1.0)
    p_toy.add_argument("--output", required=True, help="CSV path for the toy table")

    p_est = sub.add_parser("estimate", help="write one importance vector")
    p_est.add_argument("--train", required=True, help="training CSV")
    p_est.add_argument("--test", required=True, help="test CSV (targets ignored)")
    p_est.add_argument("--task", choices=["classification", "regression"])
    p_est.add_argument("--class-count", type=int, dest="class_count")
    p_est.add_argument(
        "--method", default="KLIEP", choices=[m.value for m in Method]
    )
    p_est.add_argument(
        "--phi-mode", default="C", dest="phi_mode", choices=[m.value for m in PhiMode]
    )
    p_est.add_argument(
        "--kernel", default="gaussian", choices=[f.value for f in KernelFamily]
    )
    p_est.add_argument("--bandwidth", type=float, default=1.0)
    p_est.add_argument("--seed", type=int, default=2032)
    p_est.add_argument("--no-standardize", action="store_true")
    p_est.add_argument("--spec", help="EstimatorSpec JSON file (flags override)")
    p_est.add_argument("--output", required=True, help="CSV path for the weights")

    return parser


def _load_config(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        config = ExperimentConfig.from_json_file(args.config)
    else:
        config = ExperimentConfig()
    if getattr(args, "dataset", None):
        if not args.task:
            raise _UsageError("--dataset needs --task")
        name = args.name or Path(args.dataset).stem
        config = replace(
            config,
            datasets=(
                DatasetConfig(
                    name=name,
                    path=args.dataset,
                    task=args.task,
                    class_count=args.class_count,
                ),
            ),
        )
    overrides = {}
    for field_name in ("seeds", "variants", "test_fraction", "min_separation",
                       "steepness", "methods", "phi_modes", "folds", "workers"):
        value = getattr(args, field_name, None)
        if value is not None:
            overrides[field_name] = value
    if getattr(args, "output", None):
        overrides["output_dir"] = args.output
    if overrides:
        config = replace(config, **overrides)
    if getattr(args, "no_standardize", False):
        config = replace(config, estimator=replace(config.estimator, standardize=False))
    if getattr(args, "workers", None) is None and WORKERS_ENV in os.environ:
        config = replace(config, workers=int(os.environ[WORKERS_ENV]))
    if not config.datasets:
        raise _UsageError("no datasets: give --config or --dataset/--task")
    return config


def _cmd_inject(args) -> int:
    config = _load_config(args)
    for directory in inject_command(config):
        print(directory)
    return EXIT_OK


def _cmd_run(args) -> int:
    config = _load_config(args)
    report = run_command(config, args.report)
    print(report)
    return EXIT_OK


def _cmd_rank(args) -> int:
    phi_modes = tuple(args.phi_modes) if args.phi_modes else ("C", "P", "CP")
    combined = rank_command(args.report, args.output, phi_modes)
    print(combined)
    summary = Path(args.output) / "summary.txt"
    sys.stdout.write(summary.read_text())
    return EXIT_OK


def _cmd_toy(args) -> int:
    table = toy_table(args.seed, shift=args.shift)
    write_toy_csv(args.output, table)
    print(args.output)
    return EXIT_OK


def _cmd_estimate(args) -> int:
    if args.spec:
        spec = EstimatorSpec.from_json(Path(args.spec).read_text())
    else:
        spec = EstimatorSpec()
    spec = replace(
        spec,
        method=Method(args.method),
        phi_mode=PhiMode(args.phi_mode),
        kernel=KernelConfig(KernelFamily(args.kernel), args.bandwidth),
        standardize=spec.standardize and not args.no_standardize,
    )
    train = read_dataset_csv(args.train, args.task, args.class_count)
    test = read_dataset_csv(args.test, args.task, args.class_count)
    weights = estimate(
        spec, train, test.covariates, RngStream(args.seed).child("estimate")
    )
    write_importance_csv(args.output, weights)
    print(args.output)
    return EXIT_OK


_COMMANDS = {
    "inject": _cmd_inject,
    "run": _cmd_run,
    "rank": _cmd_rank,
    "toy": _cmd_toy,
    "estimate": _cmd_estimate,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _SOLVER_ERRORS as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ShiftWeightError, OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"data error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
