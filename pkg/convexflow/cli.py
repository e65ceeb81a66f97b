# Copyright (C) 2024 The convexflow authors
# This file is part of convexflow
# SPDX-License-Identifier: Apache-2.0

"""
Command line interface::

    convexflow run    [--config FILE] [--out DIR] [--seed N] [--method LABEL]
    convexflow single --method LABEL [--seed N] [--config FILE] [--out DIR]
    convexflow eval   RECORD [--config FILE]
    convexflow check

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure or failed check.
When the four default methods are part of a sweep, ``run`` also prints their mean-MMD ordering
lines; these are informational and do not change the exit code.
"""

import argparse
import logging
import sys
from dataclasses import replace
from typing import List, Optional

from . import __version__
from .checks import run_checks
from .errors import ConvexFlowError
from .experiment import (COMPARISON_LABELS, ExperimentConfig, comparison_gate, evaluate_record, resolve_output_dir,
                         run_single, run_suite)
from .records import read_record, write_record

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2


class UsageError(Exception):
    pass


class _ArgumentParser(argparse.ArgumentParser):

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON); defaults to the built-in experiment")
    common.add_argument("--seed", type=int, help="seed to run (default: all configured seeds, 0 for single)")
    common.add_argument("--method", help="method label")
    common.add_argument("--out", help="output directory (default: $CONVEXFLOW_OUTPUT_DIR or ./convexflow_runs)")
    common.add_argument("--quiet", action="store_true", help="only log warnings and errors")

    parser = _ArgumentParser(prog="convexflow",
                             description="Optimal transport maps by constrained gradient flows over convex networks.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_ArgumentParser)
    sub.add_parser("run", parents=[common], help="run the seed sweep of all methods and write the summary")
    sub.add_parser("single", parents=[common], help="run one method on one seed with a per-step trace")
    eval_parser = sub.add_parser("eval", parents=[common], help="recompute the final MMD of a saved run record")
    eval_parser.add_argument("record", help="path of a run record (JSON)")
    sub.add_parser("check", parents=[common], help="run the oracle and invariant self-tests")
    return parser


def _load_config(args) -> ExperimentConfig:
    if args.config:
        return ExperimentConfig.from_json(args.config)
    return ExperimentConfig()


def _cmd_run(args) -> int:
    config = _load_config(args)
    if args.seed is not None:
        config = replace(config, seeds=[args.seed])
    if args.method is not None:
        config = replace(config, methods=[config.method(args.method)])
    out_dir = resolve_output_dir(args.out, config)
    rows = run_suite(config, out_dir)
    print(f"records and summary written to {out_dir}")
    for row in rows:
        print(f"{row['method']:>12}  n={row['n_seeds']:<4d} mmd mean {row['mmd_mean']:.6f} "
              f"std {row['mmd_std']:.6f} min {row['mmd_min']:.6f} max {row['mmd_max']:.6f}")
    if set(COMPARISON_LABELS) <= {row["method"] for row in rows}:
        for result in comparison_gate(rows):
            print(f"{'PASS' if result.passed else 'FAIL'} ordering {result.name}: {result.detail}")
    return EXIT_OK


def _cmd_single(args) -> int:
    if args.method is None:
        raise UsageError("single needs --method")
    config = _load_config(args)
    seed = 0 if args.seed is None else args.seed
    record = run_single(config, args.method, seed)
    path = write_record(record, resolve_output_dir(args.out, config))
    print(path)
    print(f"final_mmd {record.final_mmd!r}")
    if record.final_map_error is not None:
        print(f"final_map_error {record.final_map_error!r}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    record = read_record(args.record)
    config = ExperimentConfig.from_json(args.config) if args.config else None
    mmd, map_error = evaluate_record(record, config)
    print(f"final_mmd {mmd!r} (stored {record.final_mmd!r})")
    if map_error is not None:
        print(f"final_map_error {map_error!r}")
    return EXIT_OK


def _cmd_check(args) -> int:
    results = run_checks()
    for result in results:
        print(f"{'PASS' if result.passed else 'FAIL'} {result.name}: {result.detail}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        logger.error("%d check(s) failed: %s", len(failed), ", ".join(failed))
        return EXIT_NUMERICAL
    return EXIT_OK


COMMANDS = {"run": _cmd_run, "single": _cmd_single, "eval": _cmd_eval, "check": _cmd_check}


def cli_main(argv: Optional[List[str]] = None) -> int:
    """
    Entry point of the ``convexflow`` command; returns the exit code.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        return int(e.code or 0)

    level = logging.WARNING if args.quiet else (logging.DEBUG if args.command == "single" else logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"convexflow: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ArithmeticError as e:
        logger.error("numerical failure: %s", e)
        return EXIT_NUMERICAL
    except (ConvexFlowError, ValueError, KeyError, OSError) as e:
        logger.error("%s", e)
        return EXIT_USAGE


def main():
    sys.exit(cli_main())
