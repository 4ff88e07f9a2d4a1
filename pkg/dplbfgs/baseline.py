"""Direct SpaRSA on F with replicated vectors, the comparison baseline."""

from __future__ import annotations

import math

import numpy as np

from .comm import LocalReducer, WorkerComm
from .const import LABEL_GRADIENT, LABEL_OBJECTIVE, LOGGER, REASON_STATIONARY
from .objective import LossCache, Regularizer, SmoothLoss
from .solver import SolverResult, WorkerSolver
from .sparsa import (
    STOP_STATIONARY,
    SparsaResult,
    SubproblemModel,
    SubproblemSpec,
    async_sparsa_solve,
)


class LossModel(SubproblemModel):
    """fhat(p) = f(w0 + p) - f(w0), evaluated through the world.

    Each trial costs one d-length gradient reduction and one scalar loss
    reduction; the regularizer and step norms are computed on replicated
    vectors.
    """

    def __init__(
        self,
        comm: WorkerComm,
        loss: SmoothLoss,
        cache: LossCache,
        grad: np.ndarray,
        anchor: np.ndarray,
        regularizer: Regularizer,
    ) -> None:
        self._comm = comm
        self._loss = loss
        self._cache = cache
        self._grad = grad
        self.anchor = anchor
        self.regularizer = regularizer
        self.reducer = LocalReducer()
        self._trial: np.ndarray | None = None
        self._trial_dir: np.ndarray | None = None

    def _direction(self, p: np.ndarray) -> np.ndarray:
        if p is not self._trial:
            self._trial = p
            self._trial_dir = self._cache.project(p)
        return self._trial_dir

    def initial_gradient(self) -> np.ndarray:
        return self._grad.copy()

    async def async_gradient(self, p: np.ndarray) -> np.ndarray:
        z = self._cache.z + self._direction(p)
        return await self._comm.async_allreduce_sum(
            self._loss.grad_local(z), LABEL_GRADIENT
        )

    async def async_evaluate(
        self, p: np.ndarray, step: np.ndarray, grad: np.ndarray
    ) -> tuple[float, float]:
        change = await self._comm.async_allreduce_scalar(
            self._loss.loss_delta_local(self._cache.z, self._direction(p), 1.0),
            LABEL_OBJECTIVE,
        )
        return change + self.regularizer.value_delta(self.anchor, p), float(step @ step)


class BaselineWorker(WorkerSolver):
    """Runs SpaRSA directly on F, one trace row per accepted SpaRSA iteration."""

    async def async_run(self, w0: np.ndarray | None = None) -> SolverResult:
        """Run direct SpaRSA from w0 with the first spectral seed a0."""
        cfg = self.config
        state = await self.async_setup(w0)
        self._record(state, delta=math.nan, alpha=math.nan, backtracks=0, inner_iters=0)
        reason = self._termination(state)
        if reason is not None:
            state.termination_reason = reason
            return self._result(state)

        model = LossModel(
            self.comm,
            self.loss,
            state.cache,
            state.grad,
            state.w.copy(),
            self.regularizer,
        )
        spec = SubproblemSpec(
            model,
            psi0=state.a0,
            beta=cfg.beta,
            sigma0=cfg.sigma0,
            delta=cfg.delta,
            psi_growth_limit=cfg.psi_growth_limit,
        )
        w0_full = state.w.copy()
        objective0 = state.objective
        seen_trials = seen_updates = 0

        def observe(
            iteration: int, p: np.ndarray, result: SparsaResult, grad: np.ndarray
        ) -> bool:
            nonlocal seen_trials, seen_updates
            state.w = w0_full + p
            state.grad = grad
            state.objective = objective0 + result.objective
            state.iteration = iteration + 1
            self._record(
                state,
                delta=math.nan,
                alpha=1.0,
                backtracks=0,
                inner_iters=1,
                trials=result.trials - seen_trials,
                psi_updates=result.psi_updates - seen_updates,
            )
            seen_trials, seen_updates = result.trials, result.psi_updates
            reason = self._termination(state)
            if reason is None:
                return False
            state.termination_reason = reason
            return True

        result = await async_sparsa_solve(
            spec, eps1=0.0, max_iters=cfg.max_outer_iters, observer=observe
        )
        if result.termination_reason == STOP_STATIONARY:
            state.termination_reason = REASON_STATIONARY
        if self.record_trace:
            LOGGER.info(
                "Direct SpaRSA finished after %d iterations (%s): F=%.10g",
                state.iteration,
                state.termination_reason,
                state.objective,
            )
        return self._result(state)
