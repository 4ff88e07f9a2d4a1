"""Tests for the distributed outer loop."""

from __future__ import annotations

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.special import expit

from dplbfgs.config import SolverConfig
from dplbfgs.const import (
    BYTES_PER_VALUE,
    LABEL_APPLY_H,
    LABEL_DELTA,
    LABEL_GATHER,
    LABEL_GRADIENT,
    LABEL_LINE_SEARCH,
    LABEL_OBJECTIVE,
    LABEL_PAIR,
    LABEL_QUADFORM,
    LABEL_SPARSA,
    MODE_PARTITIONED,
    MODE_REPLICATED,
    REASON_MAX_OUTER,
    REASON_NUMERICALLY_STATIONARY,
    REASON_STATIONARY,
    REASON_TARGET,
)
from dplbfgs.data import LabeledDataset, make_sparse_dataset, partition_features
from dplbfgs.errors import ConfigError, DescentError, LineSearchError
from dplbfgs.objective import (
    L1Regularizer,
    NullRegularizer,
    Regularizer,
    SmoothLoss,
    loss_value_local,
    reg_value_l1,
)
from dplbfgs.solver import WorkerSolver, prox_grad_norm

from .conftest import run_workers, shard_of, simulated_world

ALL_LABELS = (
    LABEL_OBJECTIVE,
    LABEL_GRADIENT,
    LABEL_QUADFORM,
    LABEL_PAIR,
    LABEL_APPLY_H,
    LABEL_SPARSA,
    LABEL_GATHER,
    LABEL_DELTA,
    LABEL_LINE_SEARCH,
)


class SquareLoss(SmoothLoss):
    """f(w) = sum_i (x_i^T w)^2."""

    def value_local(self, z: np.ndarray) -> float:
        return float(np.sum(z**2))

    def grad_local(self, z: np.ndarray) -> np.ndarray:
        return self.shard.matrix @ (2.0 * z)


class FixedChangeLoss(SquareLoss):
    """Reports a fixed loss change per unit step."""

    def __init__(self, shard, c: float, rate: float) -> None:
        super().__init__(shard, c)
        self.rate = rate

    def loss_delta_local(self, z, z_dir, alpha) -> float:
        return alpha * self.rate


class ScaledWrongProx(NullRegularizer):
    """Returns a step pointing uphill."""

    def __init__(self, scale: float) -> None:
        self.scale = scale

    def prox_step(self, u, w, psi):
        return -self.scale * np.asarray(u)


def _scalar_dataset() -> LabeledDataset:
    return LabeledDataset.from_matrix(sp.csc_matrix([[1.0]]), [1.0])


def _single_worker(dataset, config, loss=None, regularizer=None) -> WorkerSolver:
    comm = simulated_world(1).worker(0)
    shard = shard_of(dataset)
    if isinstance(loss, type):
        loss = loss(shard, config.c)
    return WorkerSolver(
        comm, shard, partition_features(dataset.d, 1), config, loss, regularizer
    )


def _reference_objective(dataset: LabeledDataset, c: float, iterations: int) -> float:
    """Proximal gradient with step 1/L on the full objective."""
    x = dataset.matrix.toarray()
    y = dataset.labels
    lipschitz = c * np.linalg.norm(x, 2) ** 2 / 4.0
    w = np.zeros(dataset.d)
    for _ in range(iterations):
        grad = x @ (-c * y * expit(-y * (x.T @ w)))
        u = w - grad / lipschitz
        w = np.sign(u) * np.maximum(np.abs(u) - 1.0 / lipschitz, 0.0)
    return c * float(np.sum(np.logaddexp(0.0, -y * (x.T @ w)))) + float(np.abs(w).sum())


@pytest.mark.parametrize(
    ("w", "grad", "regularizer", "expected"),
    [
        ([0.0, 0.0], [3.0, -4.0], NullRegularizer(), 5.0),
        ([0.0, 0.0], [0.5, 0.0], L1Regularizer(), 0.0),
        ([0.0, 0.0], [2.0, 0.0], L1Regularizer(), 1.0),
    ],
)
def test_prox_grad_norm(w, grad, regularizer, expected) -> None:
    """Verify the stationarity measure."""
    assert prox_grad_norm(np.array(w), np.array(grad), regularizer) == expected


async def test_line_search_halves_overshoot() -> None:
    """Verify F = w^2, w = 1, p = -2 accepts alpha = 0.5 after one halving."""
    worker = _single_worker(
        _scalar_dataset(), SolverConfig(), SquareLoss, NullRegularizer()
    )
    state = await worker.async_setup(np.array([1.0]))
    p = np.array([-2.0])
    state.cache.set_direction(p)

    alpha, change, backtracks = await worker.async_line_search(state, p, -4.0)

    assert (alpha, change, backtracks) == (0.5, -1.0, 1)


async def test_line_search_accepts_boundary() -> None:
    """Verify a change equal to sigma1 delta is accepted at the unit step."""
    config = SolverConfig()
    dataset = _scalar_dataset()
    loss = FixedChangeLoss(shard_of(dataset), 1.0, config.sigma1 * -4.0)
    worker = _single_worker(dataset, config, loss, NullRegularizer())
    state = await worker.async_setup(np.array([1.0]))
    state.cache.set_direction(np.array([-2.0]))

    alpha, _, backtracks = await worker.async_line_search(state, np.array([-2.0]), -4.0)

    assert (alpha, backtracks) == (1.0, 0)


async def test_line_search_zero_direction_is_noop() -> None:
    """Verify p = 0 with delta = 0 is accepted at the unit step without change."""
    worker = _single_worker(
        _scalar_dataset(), SolverConfig(), SquareLoss, NullRegularizer()
    )
    state = await worker.async_setup(np.array([1.0]))
    state.cache.set_direction(np.zeros(1))

    assert await worker.async_line_search(state, np.zeros(1), 0.0) == (1.0, 0.0, 0)


async def test_line_search_exhausts_backtracks() -> None:
    """Verify a loss that never decreases ends in LineSearchError."""
    config = SolverConfig(max_backtracks=5)
    dataset = _scalar_dataset()
    loss = FixedChangeLoss(shard_of(dataset), 1.0, 1.0)
    worker = _single_worker(dataset, config, loss, NullRegularizer())
    state = await worker.async_setup(np.array([1.0]))
    state.cache.set_direction(np.array([-1.0]))

    with pytest.raises(LineSearchError) as excinfo:
        await worker.async_line_search(state, np.array([-1.0]), -1.0)

    assert excinfo.value.backtracks == 5
    assert worker.comm.ledger.rounds == 0


async def test_first_step_single_instance(single_instance: LabeledDataset) -> None:
    """Verify x = e1, y = 1, C = 10 takes the closed-form step (1.6, 0, 0)."""
    worker = _single_worker(single_instance, SolverConfig(c=10.0, max_outer_iters=1))

    result = await worker.async_run()

    assert result.a0 == pytest.approx(2.5)
    assert result.w == pytest.approx([1.6, 0.0, 0.0])
    assert result.termination_reason == REASON_MAX_OUTER
    first = result.trace[1]
    assert first.alpha == 1.0
    assert first.delta == pytest.approx(-6.4)
    assert first.inner_iters == 0
    assert first.objective < result.trace[0].objective
    assert first.objective == pytest.approx(10.0 * np.log1p(np.exp(-1.6)) + 1.6)


async def test_zero_iteration_budget_returns_start(small_dataset: LabeledDataset) -> None:
    """Verify max_outer_iters = 0 returns w0 untouched."""
    w0 = np.linspace(-0.1, 0.1, small_dataset.d)
    worker = _single_worker(small_dataset, SolverConfig(max_outer_iters=0))

    result = await worker.async_run(w0)

    assert np.array_equal(result.w, w0)
    assert result.iterations == 0
    assert result.termination_reason == REASON_MAX_OUTER
    assert len(result.trace) == 1


async def test_tiny_weight_gives_zero_solution(tiny_dataset: LabeledDataset) -> None:
    """Verify C ||grad loss(0)||_inf < 1 leaves w* = 0."""
    worker = _single_worker(tiny_dataset, SolverConfig(c=1e-3))

    result = await worker.async_run()

    assert result.termination_reason == REASON_TARGET
    assert result.iterations == 0
    assert not np.any(result.w)
    assert result.objective == pytest.approx(1e-3 * tiny_dataset.n * np.log(2.0))


async def test_zero_direction_is_stationary(tiny_dataset: LabeledDataset) -> None:
    """Verify a zero closed-form direction ends the run as stationary."""
    worker = _single_worker(tiny_dataset, SolverConfig(c=1e-3, grad_tol=-1.0))

    result = await worker.async_run()

    assert result.termination_reason == REASON_STATIONARY
    assert result.converged


async def test_uphill_direction_fails(single_instance: LabeledDataset) -> None:
    """Verify a direction with positive predicted change raises with the partial run."""
    worker = _single_worker(
        single_instance, SolverConfig(), regularizer=ScaledWrongProx(1.0)
    )

    with pytest.raises(DescentError) as excinfo:
        await worker.async_run()

    assert excinfo.value.delta > 0.0
    assert np.array_equal(excinfo.value.w, np.zeros(3))
    assert len(excinfo.value.trace) == 1


async def test_negligible_uphill_direction_is_stationary(
    single_instance: LabeledDataset,
) -> None:
    """Verify a vanishing direction with delta >= 0 counts as stationary."""
    worker = _single_worker(
        single_instance, SolverConfig(grad_tol=0.0), regularizer=ScaledWrongProx(1e-20)
    )

    result = await worker.async_run()

    assert result.termination_reason == REASON_NUMERICALLY_STATIONARY


async def test_converges_to_reference(tiny_dataset: LabeledDataset) -> None:
    """Verify monotone descent to the proximal-gradient reference optimum."""
    config = SolverConfig(m=5)
    (result,), _ = await run_workers(tiny_dataset, config, 1)

    objectives = [row.objective for row in result.trace]
    assert all(b <= a for a, b in zip(objectives, objectives[1:]))
    assert result.termination_reason == REASON_TARGET
    assert result.trace[-1].prox_grad_norm <= 1e-8
    reference = _reference_objective(tiny_dataset, config.c, 100_000)
    assert result.objective == pytest.approx(reference, rel=1e-6)


@pytest.mark.parametrize("size", [1, 2, 3])
async def test_accepted_steps_satisfy_sufficient_decrease(
    small_dataset: LabeledDataset, size: int
) -> None:
    """Verify every logged step meets F_new - F_old <= alpha sigma1 delta."""
    config = SolverConfig(max_outer_iters=25)
    results, _ = await run_workers(small_dataset, config, size)

    rows = results[0].trace
    for previous, row in zip(rows, rows[1:]):
        slack = 1e-12 * abs(previous.objective)
        bound = row.alpha * config.sigma1 * row.delta + slack
        assert row.objective - previous.objective <= bound
        assert row.backtracks < config.max_backtracks

    w = results[0].w
    shard = shard_of(small_dataset)
    recomputed = loss_value_local(shard, shard.matrix.T @ w, config.c) + reg_value_l1(w)
    assert rows[-1].objective == pytest.approx(recomputed, rel=1e-10)


async def test_workers_agree(small_dataset: LabeledDataset) -> None:
    """Verify every worker ends with the same iterate and the same traffic."""
    results, comms = await run_workers(small_dataset, SolverConfig(max_outer_iters=10), 3)

    for result in results[1:]:
        assert np.array_equal(result.w, results[0].w)
        assert result.objective == results[0].objective
    assert len({comm.ledger.bytes for comm in comms}) == 1
    assert results[1].trace == []


async def test_iterates_do_not_depend_on_worker_count() -> None:
    """Verify full solves with K in {1, 2, 4, 8} produce the same iterates."""
    dataset = make_sparse_dataset(2000, 500, density=0.02, seed=11)
    config = SolverConfig()

    (baseline,), _ = await run_workers(dataset, config, 1)
    for size in (2, 4, 8):
        results, _ = await run_workers(dataset, config, size)
        assert results[0].termination_reason == baseline.termination_reason
        assert results[0].iterations == baseline.iterations
        assert np.allclose(results[0].w, baseline.w, rtol=0.0, atol=1e-12)
        for row, expected in zip(results[0].trace, baseline.trace):
            assert row.objective == pytest.approx(expected.objective, rel=1e-10)
            assert row.inner_iters == expected.inner_iters


async def test_modes_match_exactly_on_one_worker(small_dataset: LabeledDataset) -> None:
    """Verify partitioned and replicated subproblems coincide bit for bit at K = 1."""
    config = SolverConfig(max_outer_iters=15)

    (partitioned,), _ = await run_workers(small_dataset, config, 1)
    (replicated,), _ = await run_workers(
        small_dataset, config.replace(mode=MODE_REPLICATED), 1
    )

    assert np.array_equal(partitioned.w, replicated.w)
    objectives = [r.objective for r in partitioned.trace]
    assert objectives == [r.objective for r in replicated.trace]


async def test_modes_agree_across_workers(small_dataset: LabeledDataset) -> None:
    """Verify replicated and partitioned subproblems agree at K = 3."""
    config = SolverConfig(max_outer_iters=15)

    partitioned, _ = await run_workers(small_dataset, config, 3)
    replicated_config = config.replace(mode=MODE_REPLICATED)
    replicated, _ = await run_workers(small_dataset, replicated_config, 3)

    assert np.allclose(partitioned[0].w, replicated[0].w, rtol=1e-8, atol=1e-10)


class EuclideanNorm(Regularizer):
    """g(w) = ||w||_2, which does not split over feature slices."""

    separable = False

    def value(self, w):
        return float(np.linalg.norm(w))

    def prox_step(self, u, w, psi):
        v = w + u
        norm = np.linalg.norm(v)
        shrink = max(0.0, 1.0 - 1.0 / (psi * norm)) if norm > 0.0 else 0.0
        return shrink * v - w


class EuclideanWorker(WorkerSolver):
    def __init__(self, comm, shard, partition, config) -> None:
        super().__init__(comm, shard, partition, config, regularizer=EuclideanNorm())


def test_partitioned_mode_needs_separable_regularizer(
    tiny_dataset: LabeledDataset,
) -> None:
    """Verify a non-separable g is refused for partitioned subproblems."""
    with pytest.raises(ConfigError):
        _single_worker(tiny_dataset, SolverConfig(), regularizer=EuclideanNorm())


async def test_non_separable_regularizer_is_evaluated_whole(
    small_dataset: LabeledDataset,
) -> None:
    """Verify replicated mode sums a non-separable g once, not per feature slice."""
    config = SolverConfig(mode=MODE_REPLICATED, max_outer_iters=10, grad_tol=0.0)

    (single,), _ = await run_workers(small_dataset, config, 1, EuclideanWorker)
    results, _ = await run_workers(small_dataset, config, 3, EuclideanWorker)

    w = results[0].w
    assert np.any(w)
    shard = shard_of(small_dataset)
    loss = loss_value_local(shard, shard.matrix.T @ w, config.c)
    assert results[0].objective == pytest.approx(loss + np.linalg.norm(w), rel=1e-10)
    assert np.allclose(w, single.w, rtol=1e-8, atol=1e-10)


def _expected_budget(rows, d: int, partitioned: bool) -> dict[str, tuple[int, int]]:
    steps = rows[1:]
    value = BYTES_PER_VALUE
    budget = {
        LABEL_OBJECTIVE: (1, value),
        LABEL_QUADFORM: (1, value),
        LABEL_GRADIENT: (1 + len(steps), value * d * (1 + len(steps))),
        LABEL_DELTA: (len(steps), value * len(steps)),
        LABEL_LINE_SEARCH: (
            sum(row.backtracks + 1 for row in steps),
            value * sum(row.backtracks + 1 for row in steps),
        ),
    }
    if not partitioned:
        return budget
    # a pair is pushed at the start of every step after the first
    pushes = [rows[i - 1].memory_pairs for i in range(2, len(rows))]
    solves = [row for row in steps if row.memory_pairs]
    trials = sum(row.trials for row in steps)
    sparsa_rounds = sum(row.trials + row.psi_updates for row in steps)
    budget |= {
        LABEL_PAIR: (len(pushes), value * sum(2 * k + 2 for k in pushes)),
        LABEL_GATHER: (len(solves), value * d * len(solves)),
        LABEL_APPLY_H: (
            trials,
            value * sum(row.trials * 2 * row.memory_pairs for row in steps),
        ),
        LABEL_SPARSA: (sparsa_rounds, value * 2 * sparsa_rounds),
    }
    return budget


@pytest.mark.parametrize("mode", [MODE_PARTITIONED, MODE_REPLICATED])
async def test_communication_budget_is_exact(
    small_dataset: LabeledDataset, mode: str
) -> None:
    """Verify the ledger equals the closed-form per-iteration budget."""
    config = SolverConfig(max_outer_iters=6, m=3, mode=mode)
    results, comms = await run_workers(small_dataset, config, 2)

    rows = results[0].trace
    ledger = comms[0].ledger
    expected = _expected_budget(rows, small_dataset.d, mode == MODE_PARTITIONED)
    for label in ALL_LABELS:
        assert (ledger.rounds_for(label), ledger.bytes_for(label)) == expected.get(
            label, (0, 0)
        ), label
    assert ledger.rounds == sum(r for r, _ in expected.values())
    assert ledger.bytes == sum(b for _, b in expected.values())
    assert rows[-1].comm_bytes == ledger.bytes
    assert any(row.trials for row in rows)


async def test_single_worker_records_no_traffic(small_dataset: LabeledDataset) -> None:
    """Verify K = 1 charges nothing to the ledger."""
    (result,), comms = await run_workers(small_dataset, SolverConfig(max_outer_iters=5), 1)

    assert comms[0].ledger.rounds == 0
    assert result.comm_bytes == 0
    assert result.modeled_time_s == 0.0
