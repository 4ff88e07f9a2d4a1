"""Command-line front end: ``python -m dplbfgs``."""

from __future__ import annotations

import argparse
import logging
import sys
from collections.abc import Sequence
from typing import Any

from .bench import compare_methods, run_benchmark, sweep_eps1
from .config import RunSpec, SolverConfig
from .const import (
    BACKEND_SIMULATOR,
    BACKEND_SOCKET,
    CONF_BACKEND,
    CONF_C,
    CONF_DATA,
    CONF_DATASET_KIND,
    CONF_EPS1,
    CONF_GAMMA_RULE,
    CONF_MAX_OUTER_ITERS,
    CONF_MEMORY,
    CONF_METHOD,
    CONF_MODE,
    CONF_OUT,
    CONF_SEED,
    CONF_T_BYTE,
    CONF_T_INITIAL,
    CONF_WORKERS,
    DATASET_DENSE,
    DATASET_SPARSE,
    DEFAULT_EPS1_SWEEP,
    EXIT_FAILURE,
    EXIT_NOT_CONVERGED,
    EXIT_OK,
    EXIT_USAGE,
    GAMMA_CURVATURE,
    GAMMA_PRINTED,
    LOGGER,
    METHOD_DPLBFGS,
    METHOD_SPARSA,
    MODE_PARTITIONED,
    MODE_REPLICATED,
)
from .errors import ConfigError, DplbfgsError, SolverError


def build_parser() -> argparse.ArgumentParser:
    """Return the argument parser."""
    parser = argparse.ArgumentParser(
        prog="dplbfgs",
        description="Distributed proximal LBFGS for L1-regularized logistic regression",
    )
    parser.add_argument("--data", type=str, help="LIBSVM file (.gz accepted)")
    parser.add_argument("--k", type=int, dest="k", help="number of workers")
    parser.add_argument("--method", choices=[METHOD_DPLBFGS, METHOD_SPARSA])
    parser.add_argument("--eps1", type=float, help="inner stopping ratio")
    parser.add_argument("--m", type=int, dest="m", help="LBFGS memory")
    parser.add_argument("--c", type=float, dest="c", help="loss weight C")
    parser.add_argument("--max-iters", type=int, dest="max_iters")
    parser.add_argument("--tinit", type=float, help="seconds per connection")
    parser.add_argument("--tbyte", type=float, help="seconds per byte")
    parser.add_argument("--out", type=str, help="output directory")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--mode", choices=[MODE_PARTITIONED, MODE_REPLICATED])
    parser.add_argument("--gamma-rule", choices=[GAMMA_CURVATURE, GAMMA_PRINTED])
    parser.add_argument("--backend", choices=[BACKEND_SIMULATOR, BACKEND_SOCKET])
    parser.add_argument(
        "--dataset-kind",
        choices=[DATASET_SPARSE, DATASET_DENSE],
        help="synthetic desk dataset used when --data is omitted",
    )
    action = parser.add_mutually_exclusive_group()
    action.add_argument(
        "--sweep",
        action="store_true",
        help=f"sweep eps1 over {', '.join(f'{v:g}' for v in DEFAULT_EPS1_SWEEP)}",
    )
    action.add_argument(
        "--compare", action="store_true", help="run dplbfgs and direct SpaRSA"
    )
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", "-v", action="store_true")
    verbosity.add_argument("--quiet", "-q", action="store_true")
    return parser


def _present(pairs: dict[str, Any]) -> dict[str, Any]:
    return {key: value for key, value in pairs.items() if value is not None}


def specs_from_args(args: argparse.Namespace) -> RunSpec:
    """Validate parsed flags into a RunSpec.

    Raises:
        ConfigError: If a value is out of range
    """
    solver = SolverConfig.from_mapping(
        _present(
            {
                CONF_EPS1: args.eps1,
                CONF_MEMORY: args.m,
                CONF_C: args.c,
                CONF_MAX_OUTER_ITERS: args.max_iters,
                CONF_MODE: args.mode,
                CONF_GAMMA_RULE: args.gamma_rule,
            }
        )
    )
    return RunSpec.from_mapping(
        _present(
            {
                CONF_DATA: args.data,
                CONF_WORKERS: args.k,
                CONF_METHOD: args.method,
                CONF_T_INITIAL: args.tinit,
                CONF_T_BYTE: args.tbyte,
                CONF_OUT: args.out,
                CONF_SEED: args.seed,
                CONF_BACKEND: args.backend,
                CONF_DATASET_KIND: args.dataset_kind,
            }
        ),
        solver,
    )


def main(argv: Sequence[str] | None = None) -> int:
    """Run the command line and return the exit code."""
    args = build_parser().parse_args(argv)
    level = logging.INFO
    if args.verbose:
        level = logging.DEBUG
    elif args.quiet:
        level = logging.WARNING
    logging.basicConfig(
        level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s"
    )

    try:
        run_spec = specs_from_args(args)
    except ConfigError as err:
        LOGGER.error("Invalid arguments: %s", err)
        return EXIT_USAGE

    try:
        if args.sweep:
            frame = sweep_eps1(run_spec)
            return EXIT_OK if frame["comm_over_d"].notna().all() else EXIT_NOT_CONVERGED
        if args.compare:
            frame = compare_methods(run_spec)
            return EXIT_OK if frame["reached"].all() else EXIT_NOT_CONVERGED
        bench = run_benchmark(run_spec)
    except FileNotFoundError as err:
        LOGGER.error("Dataset not found: %s", err)
        return EXIT_USAGE
    except SolverError as err:
        LOGGER.error("Solver failed: %s (partial trace written)", err)
        return EXIT_FAILURE
    except DplbfgsError as err:
        LOGGER.error("Run failed: %s", err)
        return EXIT_FAILURE

    if not bench.result.converged:
        LOGGER.warning(
            "Stopped without convergence (%s) after %d iterations",
            bench.result.termination_reason,
            bench.result.iterations,
        )
        return EXIT_NOT_CONVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
