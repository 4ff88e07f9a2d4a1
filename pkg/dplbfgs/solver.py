"""Per-worker driver of the distributed proximal LBFGS outer loop."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .comm import LocalReducer, Reducer, WorkerComm, WorldReducer
from .config import SolverConfig
from .const import (
    CONVERGED_REASONS,
    LABEL_APPLY_H,
    LABEL_DELTA,
    LABEL_GATHER,
    LABEL_GRADIENT,
    LABEL_LINE_SEARCH,
    LABEL_OBJECTIVE,
    LABEL_PAIR,
    LABEL_QUADFORM,
    LABEL_SPARSA,
    LOGGER,
    MODE_PARTITIONED,
    REASON_MAX_OUTER,
    REASON_NUMERICALLY_STATIONARY,
    REASON_STATIONARY,
    REASON_TARGET,
    STATIONARY_STEP_RTOL,
)
from .data import FeaturePartition, LabeledShard
from .errors import ConfigError, DescentError, LineSearchError, SolverError
from .lbfgs import LbfgsMemory, compute_a0
from .objective import L1Regularizer, LogisticLoss, LossCache, Regularizer, SmoothLoss
from .sparsa import QuadraticModel, SparsaResult, SubproblemSpec, async_sparsa_solve
from .utils import nnz, relative_error


@dataclass(frozen=True)
class TraceRow:
    """One line of the run log, taken after an accepted step."""

    iteration: int
    objective: float
    rel_err: float
    delta: float
    alpha: float
    backtracks: int
    inner_iters: int
    trials: int
    psi_updates: int
    memory_pairs: int
    comm_bytes: int
    comm_rounds: int
    modeled_time_s: float
    wall_time_s: float
    prox_grad_norm: float
    nnz: int


@dataclass
class SolverState:
    """Replicated iterate, gradient and objective plus worker-local caches."""

    w: np.ndarray
    grad: np.ndarray
    objective: float
    cache: LossCache
    memory: LbfgsMemory
    a0: float
    iteration: int = 0
    prox_grad_norm: float = math.inf
    pending_pair: tuple[np.ndarray, np.ndarray] | None = None
    termination_reason: str | None = None
    trace: list[TraceRow] = field(default_factory=list)
    started: float = field(default_factory=time.perf_counter)


@dataclass
class SolverResult:
    """Final iterate and run log of worker 0."""

    w: np.ndarray
    objective: float
    trace: list[TraceRow]
    termination_reason: str
    iterations: int
    comm_bytes: int
    comm_rounds: int
    modeled_time_s: float
    a0: float

    @property
    def converged(self) -> bool:
        """Return True if the run stopped at a target or a stationary point."""
        return self.termination_reason in CONVERGED_REASONS


def prox_grad_norm(w: np.ndarray, grad: np.ndarray, regularizer: Regularizer) -> float:
    """Return ||argmin_p grad^T p + ||p||^2 / 2 + g(w + p)||."""
    return float(np.linalg.norm(regularizer.prox_step(-grad, w, 1.0)))


class WorkerSolver:
    """Runs the outer loop for one worker, in lockstep with the others.

    Every branch depends on replicated or reduced values only, so all
    workers issue the same sequence of collectives.
    """

    def __init__(
        self,
        comm: WorkerComm,
        shard: LabeledShard,
        partition: FeaturePartition,
        config: SolverConfig,
        loss: SmoothLoss | None = None,
        regularizer: Regularizer | None = None,
    ) -> None:
        """Initialize the worker.

        Args:
            comm: This worker's communication handle
            shard: Local instances
            partition: Feature partition J_1..J_K
            config: Solver parameters
            loss: Smooth loss, defaults to the C-weighted logistic loss
            regularizer: Regularizer, defaults to the L1 norm

        Raises:
            ConfigError: If partitioned mode is asked for a non-separable g
        """
        self.comm = comm
        self.shard = shard
        self.config = config
        self.loss = loss or LogisticLoss(shard, config.c)
        self.regularizer = regularizer or L1Regularizer()
        self.d = partition.d
        self.feature_slice = partition.slice(comm.rank)
        self.partitioned = config.mode == MODE_PARTITIONED
        if self.partitioned and not self.regularizer.separable:
            raise ConfigError(
                "partitioned subproblems need a separable regularizer", "mode"
            )
        # separable g is summed over feature slices, otherwise rank 0 owns all of it
        self.reg_slice = (
            self.feature_slice if self.regularizer.separable else slice(0, self.d)
        )
        self.reg_owner = self.regularizer.separable or comm.rank == 0
        self.record_trace = comm.rank == 0
        self.pair_reducer: Reducer
        self.hessian_reducer: Reducer
        self.sparsa_reducer: Reducer
        if self.partitioned:
            self.memory_slice = self.feature_slice
            self.pair_reducer = WorldReducer(comm, LABEL_PAIR)
            self.hessian_reducer = WorldReducer(comm, LABEL_APPLY_H)
            self.sparsa_reducer = WorldReducer(comm, LABEL_SPARSA)
        else:
            self.memory_slice = slice(0, self.d)
            self.pair_reducer = self.hessian_reducer = self.sparsa_reducer = (
                LocalReducer()
            )

    def _reg_value(self, w: np.ndarray) -> float:
        """Return this worker's share of g(w)."""
        if not self.reg_owner:
            return 0.0
        return self.regularizer.value(w[self.reg_slice])

    def _reg_delta(self, w: np.ndarray, p: np.ndarray, alpha: float = 1.0) -> float:
        """Return this worker's share of g(w + alpha p) - g(w)."""
        if not self.reg_owner:
            return 0.0
        rs = self.reg_slice
        return self.regularizer.value_delta(w[rs], alpha * p[rs])

    async def async_setup(self, w0: np.ndarray | None = None) -> SolverState:
        """Evaluate F, the gradient and the initial scale a0 at w0."""
        started = time.perf_counter()
        w = np.zeros(self.d) if w0 is None else np.array(w0, dtype=np.float64)
        cache = LossCache(self.shard, w)
        objective = await self.comm.async_allreduce_scalar(
            self.loss.value_local(cache.z)
            + self._reg_value(w),
            LABEL_OBJECTIVE,
        )
        grad = await self.comm.async_allreduce_sum(
            self.loss.grad_local(cache.z), LABEL_GRADIENT
        )
        a0 = 1.0
        if self.loss.has_quadform:
            quadform = await self.comm.async_allreduce_scalar(
                self.loss.hessian_quadform_local(cache.z, cache.project(grad)),
                LABEL_QUADFORM,
            )
            a0, fallback = compute_a0(grad, quadform)
            if fallback:
                LOGGER.debug("Initial scale fell back to a0 = 1")
        memory = LbfgsMemory(self.config.m, self.config.delta, self.config.gamma_rule)
        return SolverState(
            w=w,
            grad=grad,
            objective=objective,
            cache=cache,
            memory=memory,
            a0=a0,
            started=started,
        )

    def prox_grad_norm(self, state: SolverState) -> float:
        """Return the proximal-gradient norm at the current iterate (no traffic)."""
        return prox_grad_norm(state.w, state.grad, self.regularizer)

    def _termination(self, state: SolverState) -> str | None:
        cfg = self.config
        if (
            cfg.fstar is not None
            and relative_error(state.objective, cfg.fstar) <= cfg.rel_tol
        ):
            return REASON_TARGET
        if state.prox_grad_norm <= cfg.grad_tol:
            return REASON_TARGET
        if state.iteration >= cfg.max_outer_iters:
            return REASON_MAX_OUTER
        return None

    def _record(
        self,
        state: SolverState,
        *,
        delta: float,
        alpha: float,
        backtracks: int,
        inner_iters: int,
        trials: int = 0,
        psi_updates: int = 0,
    ) -> None:
        state.prox_grad_norm = self.prox_grad_norm(state)
        if not self.record_trace:
            return
        ledger = self.comm.ledger
        row = TraceRow(
            iteration=state.iteration,
            objective=state.objective,
            rel_err=relative_error(state.objective, self.config.fstar),
            delta=delta,
            alpha=alpha,
            backtracks=backtracks,
            inner_iters=inner_iters,
            trials=trials,
            psi_updates=psi_updates,
            memory_pairs=state.memory.size,
            comm_bytes=ledger.bytes,
            comm_rounds=ledger.rounds,
            modeled_time_s=ledger.modeled_time,
            wall_time_s=time.perf_counter() - state.started,
            prox_grad_norm=state.prox_grad_norm,
            nnz=nnz(state.w),
        )
        state.trace.append(row)
        LOGGER.debug(
            "iter %d: F=%.10g alpha=%s inner=%d G=%.3e bytes=%d",
            row.iteration,
            row.objective,
            alpha,
            inner_iters,
            row.prox_grad_norm,
            row.comm_bytes,
        )

    async def _async_direction(
        self, state: SolverState
    ) -> tuple[np.ndarray, SparsaResult | None]:
        """Return the full search direction p and the SpaRSA result, if any."""
        if state.memory.empty:
            scale = state.a0
            return self.regularizer.prox_step(-state.grad / scale, state.w, scale), None

        cfg = self.config
        ms = self.memory_slice
        model = QuadraticModel(
            state.grad[ms],
            state.w[ms],
            state.memory.handle(self.hessian_reducer),
            self.regularizer,
            self.sparsa_reducer,
        )
        spec = SubproblemSpec(
            model,
            psi0=state.memory.gamma,
            beta=cfg.beta,
            sigma0=cfg.sigma0,
            delta=cfg.delta,
            psi_growth_limit=cfg.psi_growth_limit,
        )
        result = await async_sparsa_solve(spec, cfg.eps1, cfg.max_inner_iters)
        if not self.partitioned:
            return result.p, result
        padded = np.zeros(self.d)
        padded[ms] = result.p
        return await self.comm.async_allreduce_sum(padded, LABEL_GATHER), result

    async def async_line_search(
        self, state: SolverState, p: np.ndarray, delta: float
    ) -> tuple[float, float, int]:
        """Find the largest theta^i with F(w + alpha p) <= F(w) + alpha sigma1 delta.

        ``state.cache.z_dir`` must already hold X_k^T p.

        Returns:
            (alpha, F(w + alpha p) - F(w), number of halvings)

        Raises:
            LineSearchError: If more than max_backtracks halvings are needed
        """
        cfg = self.config
        alpha = 1.0
        for backtracks in range(cfg.max_backtracks + 1):
            local = self.loss.loss_delta_local(
                state.cache.z, state.cache.z_dir, alpha
            ) + self._reg_delta(state.w, p, alpha)
            change = await self.comm.async_allreduce_scalar(local, LABEL_LINE_SEARCH)
            if change <= alpha * cfg.sigma1 * delta:
                return alpha, change, backtracks
            alpha *= cfg.theta
        LOGGER.error(
            "Line search failed after %d halvings (delta=%.3e)",
            cfg.max_backtracks,
            delta,
        )
        raise LineSearchError(
            f"no sufficient decrease after {cfg.max_backtracks} halvings",
            cfg.max_backtracks,
        )

    async def async_outer_step(self, state: SolverState) -> bool:
        """Perform one outer iteration.

        Returns:
            False once a termination condition holds

        Raises:
            DescentError: If the direction does not predict a decrease
            LineSearchError: If the line search exhausts its halvings
        """
        reason = self._termination(state)
        if reason is not None:
            state.termination_reason = reason
            return False

        if state.pending_pair is not None:
            s, y = state.pending_pair
            state.pending_pair = None
            ms = self.memory_slice
            await state.memory.async_try_push_pair(s[ms], y[ms], self.pair_reducer)

        p, result = await self._async_direction(state)
        inner_iters = trials = psi_updates = 0
        if result is not None:
            inner_iters = result.inner_iterations
            trials = result.trials
            psi_updates = result.psi_updates
        if not np.any(p):
            state.termination_reason = REASON_STATIONARY
            return False

        fs = self.feature_slice
        delta = await self.comm.async_allreduce_scalar(
            state.grad[fs] @ p[fs] + self._reg_delta(state.w, p),
            LABEL_DELTA,
        )
        if delta >= 0.0:
            if np.linalg.norm(p) <= STATIONARY_STEP_RTOL * (1.0 + np.linalg.norm(state.w)):
                state.termination_reason = REASON_NUMERICALLY_STATIONARY
                return False
            LOGGER.error("Direction predicts no decrease: delta=%.3e", delta)
            raise DescentError(f"non-negative predicted decrease {delta:.3e}", delta)

        state.cache.set_direction(p)
        alpha, change, backtracks = await self.async_line_search(state, p, delta)

        step = alpha * p
        state.w = state.w + step
        state.cache.accept(alpha)
        state.objective += change
        grad = await self.comm.async_allreduce_sum(
            self.loss.grad_local(state.cache.z), LABEL_GRADIENT
        )
        state.pending_pair = (step, grad - state.grad)
        state.grad = grad
        state.iteration += 1
        self._record(
            state,
            delta=delta,
            alpha=alpha,
            backtracks=backtracks,
            inner_iters=inner_iters,
            trials=trials,
            psi_updates=psi_updates,
        )
        return True

    def _result(self, state: SolverState) -> SolverResult:
        ledger = self.comm.ledger
        return SolverResult(
            w=state.w,
            objective=state.objective,
            trace=state.trace,
            termination_reason=state.termination_reason or REASON_MAX_OUTER,
            iterations=state.iteration,
            comm_bytes=ledger.bytes,
            comm_rounds=ledger.rounds,
            modeled_time_s=ledger.modeled_time,
            a0=state.a0,
        )

    async def async_run(self, w0: np.ndarray | None = None) -> SolverResult:
        """Run the outer loop to termination."""
        state = await self.async_setup(w0)
        self._record(state, delta=math.nan, alpha=math.nan, backtracks=0, inner_iters=0)
        try:
            while await self.async_outer_step(state):
                pass
        except SolverError as err:
            err.w = state.w.copy()
            err.trace = list(state.trace)
            raise
        if self.record_trace:
            LOGGER.info(
                "Finished after %d iterations (%s): F=%.10g",
                state.iteration,
                state.termination_reason,
                state.objective,
            )
        return self._result(state)
