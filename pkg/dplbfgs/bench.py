"""Benchmark harness: reference objective, traces, sweeps and method comparison."""

from __future__ import annotations

import asyncio
import hashlib
import json
import math
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from .config import RunSpec, SolverConfig
from .const import (
    BYTES_PER_VALUE,
    COMPARISON_FILENAME,
    DATASET_DENSE,
    DEFAULT_EPS1_SWEEP,
    DESK_DENSE_CONDITION,
    DESK_DENSE_D,
    DESK_DENSE_N,
    DESK_FLIP,
    DESK_SPARSE_D,
    DESK_SPARSE_DENSITY,
    DESK_SPARSE_N,
    DESK_SPARSE_ZIPF,
    DESK_SUPPORT,
    FSTAR_SUFFIX,
    LOGGER,
    METHOD_DPLBFGS,
    METHOD_SPARSA,
    REFERENCE_GRAD_TOL,
    REFERENCE_MAX_OUTER_ITERS,
    REFERENCE_STALL_GRAD_TOL,
    STEP_SIZES_FILENAME,
    SUMMARY_FILENAME,
    SWEEP_FILENAME,
    TRACE_FILENAME,
    UNIT_STEP_SOFT_TARGET,
)
from .coordinator import async_solve
from .data import LabeledDataset, load_libsvm, make_dense_dataset, make_sparse_dataset
from .errors import LineSearchError, SolverError
from .solver import SolverResult, TraceRow
from .utils import fingerprint


@dataclass(frozen=True, kw_only=True)
class TraceColumnDescription:
    """Describes one column of trace.csv."""

    key: str
    value_fn: Callable[[TraceRow, int], Any]


TRACE_COLUMNS: tuple[TraceColumnDescription, ...] = (
    TraceColumnDescription(key="iter", value_fn=lambda row, d: row.iteration),
    TraceColumnDescription(key="F", value_fn=lambda row, d: row.objective),
    TraceColumnDescription(key="rel_err", value_fn=lambda row, d: row.rel_err),
    TraceColumnDescription(
        key="comm_over_d",
        value_fn=lambda row, d: row.comm_bytes / (BYTES_PER_VALUE * d),
    ),
    TraceColumnDescription(
        key="modeled_time_s", value_fn=lambda row, d: row.modeled_time_s
    ),
    TraceColumnDescription(key="wall_time_s", value_fn=lambda row, d: row.wall_time_s),
    TraceColumnDescription(key="alpha", value_fn=lambda row, d: row.alpha),
    TraceColumnDescription(key="inner_iters", value_fn=lambda row, d: row.inner_iters),
)


def trace_frame(trace: Sequence[TraceRow], d: int) -> pd.DataFrame:
    """Return the trace as a DataFrame with the trace.csv columns."""
    return pd.DataFrame(
        {
            column.key: [column.value_fn(row, d) for row in trace]
            for column in TRACE_COLUMNS
        }
    )


def write_trace(trace: Sequence[TraceRow], d: int, path: Path) -> Path:
    """Write trace.csv and return its path."""
    path.parent.mkdir(parents=True, exist_ok=True)
    trace_frame(trace, d).to_csv(path, index=False)
    LOGGER.info("Wrote %s (%d rows)", path, len(trace))
    return path


@dataclass(frozen=True)
class StepSizeHistogram:
    """Accepted step sizes bucketed by the exponent i of alpha = theta^i."""

    theta: float
    counts: dict[int, int]
    total: int
    percent_unit: float
    min_alpha: float

    def to_frame(self) -> pd.DataFrame:
        """Return one row per bucket: exponent, alpha, count, percent."""
        exponents = sorted(self.counts)
        return pd.DataFrame(
            {
                "exponent": exponents,
                "alpha": [self.theta**i for i in exponents],
                "count": [self.counts[i] for i in exponents],
                "percent": [100.0 * self.counts[i] / self.total for i in exponents],
            }
        )


def step_size_histogram(alphas: Iterable[float], theta: float) -> StepSizeHistogram:
    """Bucket accepted step sizes; NaN entries (the initial row) are skipped."""
    values = [a for a in alphas if not math.isnan(a)]
    counts: dict[int, int] = {}
    for alpha in values:
        exponent = round(math.log(alpha) / math.log(theta))
        counts[exponent] = counts.get(exponent, 0) + 1
    total = len(values)
    return StepSizeHistogram(
        theta=theta,
        counts=counts,
        total=total,
        percent_unit=100.0 * counts.get(0, 0) / total if total else math.nan,
        min_alpha=min(values) if values else math.nan,
    )


def load_dataset(run_spec: RunSpec) -> LabeledDataset:
    """Load the LIBSVM file of the run, or generate the synthetic desk dataset.

    Raises:
        FileNotFoundError: If the data path does not exist
    """
    if run_spec.data is not None:
        if not run_spec.data.exists():
            raise FileNotFoundError(run_spec.data)
        return load_libsvm(run_spec.data)
    if run_spec.dataset_kind == DATASET_DENSE:
        return make_dense_dataset(
            DESK_DENSE_N,
            DESK_DENSE_D,
            seed=run_spec.seed,
            flip=DESK_FLIP,
            support=DESK_SUPPORT,
            condition=DESK_DENSE_CONDITION,
        )
    return make_sparse_dataset(
        DESK_SPARSE_N,
        DESK_SPARSE_D,
        DESK_SPARSE_DENSITY,
        seed=run_spec.seed,
        flip=DESK_FLIP,
        support=DESK_SUPPORT,
        zipf=DESK_SPARSE_ZIPF,
    )


def dataset_fingerprint(dataset: LabeledDataset) -> str:
    """Return a content hash of the data matrix and labels."""
    digest = hashlib.sha256()
    for array in (
        dataset.matrix.indptr,
        dataset.matrix.indices,
        dataset.matrix.data,
        dataset.labels,
    ):
        digest.update(np.ascontiguousarray(array).tobytes())
    digest.update(f"{dataset.d}x{dataset.n}".encode())
    return digest.hexdigest()[:16]


def reference_cache_path(run_spec: RunSpec, dataset: LabeledDataset) -> Path:
    """Return ``<dataset>.fstar`` next to the data file, or under the output dir."""
    if run_spec.data is not None:
        return Path(f"{run_spec.data}{FSTAR_SUFFIX}")
    return run_spec.out / f"{dataset.name}{FSTAR_SUFFIX}"


async def async_compute_reference(
    dataset: LabeledDataset,
    config: SolverConfig,
    cache_path: Path | None = None,
) -> float:
    """Return F* from the cache or from a high-accuracy single-worker run.

    The cache entry is reused only when its fingerprint matches the dataset
    content and the parameters that change the optimum.
    """
    key = fingerprint(
        {"dataset": dataset_fingerprint(dataset), "config": config.fingerprint()}
    )
    if cache_path is not None and cache_path.exists():
        try:
            cached = json.loads(cache_path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as err:
            LOGGER.warning("Ignoring unreadable reference cache %s: %s", cache_path, err)
        else:
            if cached.get("fingerprint") == key:
                LOGGER.info("Reference cache hit %s: F*=%.12g", cache_path, cached["fstar"])
                return float(cached["fstar"])
            LOGGER.info("Reference cache %s is stale, recomputing", cache_path)

    reference = config.replace(
        fstar=None,
        grad_tol=REFERENCE_GRAD_TOL,
        max_outer_iters=REFERENCE_MAX_OUTER_ITERS,
    )
    try:
        result = await async_solve(dataset, reference, size=1)
        fstar = result.objective
        if not result.converged:
            LOGGER.warning(
                "Reference run stopped (%s) at G=%.3e",
                result.termination_reason,
                result.trace[-1].prox_grad_norm,
            )
    except LineSearchError as err:
        if not err.trace or err.trace[-1].prox_grad_norm > REFERENCE_STALL_GRAD_TOL:
            raise
        fstar = err.trace[-1].objective
        LOGGER.warning(
            "Reference line search stalled at G=%.3e, accepting F*=%.12g",
            err.trace[-1].prox_grad_norm,
            fstar,
        )

    if cache_path is not None:
        cache_path.parent.mkdir(parents=True, exist_ok=True)
        cache_path.write_text(
            json.dumps({"fingerprint": key, "fstar": fstar}), encoding="utf-8"
        )
        LOGGER.info("Cached F*=%.12g at %s", fstar, cache_path)
    return fstar


def compute_reference(
    dataset: LabeledDataset, config: SolverConfig, cache_path: Path | None = None
) -> float:
    """Blocking wrapper around async_compute_reference."""
    return asyncio.run(async_compute_reference(dataset, config, cache_path))


def target_metrics(
    trace: Sequence[TraceRow], d: int, rel_tol: float
) -> dict[str, float | int | None]:
    """Return cost figures at the first row with rel_err <= rel_tol."""
    for row in trace:
        if row.rel_err <= rel_tol:
            return {
                "target_iteration": row.iteration,
                "target_comm_over_d": row.comm_bytes / (BYTES_PER_VALUE * d),
                "target_modeled_time_s": row.modeled_time_s,
                "target_wall_time_s": row.wall_time_s,
            }
    return {
        "target_iteration": None,
        "target_comm_over_d": None,
        "target_modeled_time_s": None,
        "target_wall_time_s": None,
    }


@dataclass
class BenchmarkResult:
    """Outputs of one benchmark run."""

    run_spec: RunSpec
    result: SolverResult
    fstar: float
    d: int
    trace_path: Path
    summary: dict[str, Any]

    @property
    def reached_target(self) -> bool:
        """Return True if the run reached rel_err <= rel_tol."""
        return self.summary["target_iteration"] is not None


def _summary(
    run_spec: RunSpec, dataset: LabeledDataset, result: SolverResult, fstar: float
) -> dict[str, Any]:
    config = run_spec.solver
    histogram = step_size_histogram((row.alpha for row in result.trace), config.theta)
    last = result.trace[-1]
    return {
        "method": run_spec.method,
        "dataset": dataset.name,
        "n": dataset.n,
        "d": dataset.d,
        "k": run_spec.k,
        "mode": config.mode,
        "eps1": config.eps1,
        "m": config.m,
        "c": config.c,
        "fstar": fstar,
        "objective": result.objective,
        "rel_err": last.rel_err,
        "iterations": result.iterations,
        "termination_reason": result.termination_reason,
        "converged": result.converged,
        "comm_over_d": result.comm_bytes / (BYTES_PER_VALUE * dataset.d),
        "comm_rounds": result.comm_rounds,
        "modeled_time_s": result.modeled_time_s,
        "wall_time_s": last.wall_time_s,
        "percent_unit_step": histogram.percent_unit,
        "min_alpha": histogram.min_alpha,
        **target_metrics(result.trace, dataset.d, config.rel_tol),
    }


async def async_run_benchmark(
    run_spec: RunSpec,
    dataset: LabeledDataset | None = None,
    fstar: float | None = None,
) -> BenchmarkResult:
    """Run one method and write trace.csv, step_sizes.csv and summary.json.

    On a solver failure the partial trace is written before re-raising.
    """
    dataset = dataset or load_dataset(run_spec)
    if fstar is None:
        fstar = await async_compute_reference(
            dataset, run_spec.solver, reference_cache_path(run_spec, dataset)
        )
    config = run_spec.solver.replace(fstar=fstar)
    run_spec = run_spec.replace(solver=config)
    out = run_spec.out
    out.mkdir(parents=True, exist_ok=True)
    trace_path = out / TRACE_FILENAME

    try:
        result = await async_solve(
            dataset,
            config,
            size=run_spec.k,
            method=run_spec.method,
            backend=run_spec.backend,
            t_initial=run_spec.t_initial,
            t_byte=run_spec.t_byte,
            timeout=run_spec.comm_timeout,
        )
    except SolverError as err:
        if err.trace:
            write_trace(err.trace, dataset.d, trace_path)
        raise

    write_trace(result.trace, dataset.d, trace_path)
    summary = _summary(run_spec, dataset, result, fstar)
    histogram = step_size_histogram((row.alpha for row in result.trace), config.theta)
    histogram.to_frame().to_csv(out / STEP_SIZES_FILENAME, index=False)
    (out / SUMMARY_FILENAME).write_text(
        json.dumps(summary, indent=2, default=str), encoding="utf-8"
    )
    if (
        run_spec.method == METHOD_DPLBFGS
        and summary["percent_unit_step"] < 100.0 * UNIT_STEP_SOFT_TARGET
    ):
        LOGGER.warning(
            "Unit step accepted in only %.1f%% of iterations",
            summary["percent_unit_step"],
        )
    return BenchmarkResult(run_spec, result, fstar, dataset.d, trace_path, summary)


def run_benchmark(run_spec: RunSpec) -> BenchmarkResult:
    """Blocking wrapper around async_run_benchmark."""
    return asyncio.run(async_run_benchmark(run_spec))


SWEEP_COLUMNS = (
    "eps1",
    "comm_over_d",
    "modeled_time_s",
    "wall_time_s",
    "iterations",
    "percent_unit_step",
    "min_alpha",
)


async def async_sweep_eps1(
    run_spec: RunSpec, values: Sequence[float] = DEFAULT_EPS1_SWEEP
) -> pd.DataFrame:
    """Run once per eps1 and write eps1_sweep.csv.

    comm_over_d and the times are taken where rel_err first reaches rel_tol.
    """
    dataset = load_dataset(run_spec)
    fstar = await async_compute_reference(
        dataset, run_spec.solver, reference_cache_path(run_spec, dataset)
    )
    rows = []
    for eps1 in values:
        spec = run_spec.replace(
            solver=run_spec.solver.replace(eps1=eps1),
            out=run_spec.out / f"eps1_{eps1:g}",
        )
        bench = await async_run_benchmark(spec, dataset, fstar)
        summary = bench.summary
        rows.append(
            {
                "eps1": eps1,
                "comm_over_d": summary["target_comm_over_d"],
                "modeled_time_s": summary["target_modeled_time_s"],
                "wall_time_s": summary["target_wall_time_s"],
                "iterations": summary["iterations"],
                "percent_unit_step": summary["percent_unit_step"],
                "min_alpha": summary["min_alpha"],
            }
        )
    frame = pd.DataFrame(rows, columns=list(SWEEP_COLUMNS))
    run_spec.out.mkdir(parents=True, exist_ok=True)
    frame.to_csv(run_spec.out / SWEEP_FILENAME, index=False)
    return frame


def sweep_eps1(
    run_spec: RunSpec, values: Sequence[float] = DEFAULT_EPS1_SWEEP
) -> pd.DataFrame:
    """Blocking wrapper around async_sweep_eps1."""
    return asyncio.run(async_sweep_eps1(run_spec, values))


async def async_compare_methods(
    run_spec: RunSpec, methods: Sequence[str] = (METHOD_DPLBFGS, METHOD_SPARSA)
) -> pd.DataFrame:
    """Run every method on the same dataset and F*, writing comparison.csv."""
    dataset = load_dataset(run_spec)
    fstar = await async_compute_reference(
        dataset, run_spec.solver, reference_cache_path(run_spec, dataset)
    )
    rows = []
    for method in methods:
        spec = run_spec.replace(method=method, out=run_spec.out / method)
        bench = await async_run_benchmark(spec, dataset, fstar)
        summary = bench.summary
        rows.append(
            {
                "method": method,
                "reached": bench.reached_target,
                "comm_over_d": summary["target_comm_over_d"],
                "modeled_time_s": summary["target_modeled_time_s"],
                "wall_time_s": summary["target_wall_time_s"],
                "iterations": summary["iterations"],
                "final_rel_err": summary["rel_err"],
            }
        )
    frame = pd.DataFrame(rows)
    run_spec.out.mkdir(parents=True, exist_ok=True)
    frame.to_csv(run_spec.out / COMPARISON_FILENAME, index=False)
    return frame


def compare_methods(run_spec: RunSpec) -> pd.DataFrame:
    """Blocking wrapper around async_compare_methods."""
    return asyncio.run(async_compare_methods(run_spec))
