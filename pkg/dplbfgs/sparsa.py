"""SpaRSA: spectral proximal gradient with sufficient-decrease backtracking.

The engine minimizes Q(p) = fhat(p) + g(anchor + p) - g(anchor) starting from
p = 0. Smooth parts plug in as SubproblemModel objects, which also decide how
partial sums cross the network.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from .comm import Reducer
from .const import (
    DEFAULT_BETA,
    DEFAULT_DELTA,
    DEFAULT_EPS1,
    DEFAULT_MAX_INNER_ITERS,
    DEFAULT_PSI_GROWTH_LIMIT,
    DEFAULT_SIGMA0,
    LOGGER,
)
from .errors import DomainError, SubproblemError
from .lbfgs import HessianHandle
from .objective import Regularizer

STOP_STEP_RATIO = "step_ratio"
STOP_MAX_ITERS = "max_iters"
STOP_STATIONARY = "stationary"
STOP_TARGET = "target_reached"


class SubproblemModel(ABC):
    """Smooth part of a SpaRSA problem plus its regularizer anchor."""

    regularizer: Regularizer
    anchor: np.ndarray
    reducer: Reducer

    @abstractmethod
    def initial_gradient(self) -> np.ndarray:
        """Return the smooth gradient at p = 0."""

    @abstractmethod
    async def async_gradient(self, p: np.ndarray) -> np.ndarray:
        """Return the smooth gradient at ``p``."""

    @abstractmethod
    async def async_evaluate(
        self, p: np.ndarray, step: np.ndarray, grad: np.ndarray
    ) -> tuple[float, float]:
        """Return (Q(p), ||step||^2) given the gradient at ``p``."""


class QuadraticModel(SubproblemModel):
    """fhat(p) = grad^T p + 1/2 p^T H p on one feature slice."""

    def __init__(
        self,
        grad: np.ndarray,
        anchor: np.ndarray,
        hessian: HessianHandle,
        regularizer: Regularizer,
        reducer: Reducer,
    ) -> None:
        """Initialize the model.

        Args:
            grad: Smooth gradient at the anchor, restricted to the slice
            anchor: Current iterate w restricted to the slice
            hessian: Operator H acting on the slice
            regularizer: Regularizer g, separable when the reducer spans workers
            reducer: Completes sums over the slices
        """
        self.grad = grad
        self.anchor = anchor
        self.hessian = hessian
        self.regularizer = regularizer
        self.reducer = reducer

    def initial_gradient(self) -> np.ndarray:
        return self.grad.copy()

    async def async_gradient(self, p: np.ndarray) -> np.ndarray:
        return self.grad + await self.hessian.async_apply(p)

    async def async_evaluate(
        self, p: np.ndarray, step: np.ndarray, grad: np.ndarray
    ) -> tuple[float, float]:
        share = (grad + self.grad) @ p / 2.0 + self.regularizer.value_delta(
            self.anchor, p
        )
        total = await self.reducer.async_sum(np.array([share, step @ step]))
        return float(total[0]), float(total[1])


@dataclass(frozen=True)
class SubproblemSpec:
    """One SpaRSA problem: model, first spectral seed and step-control constants."""

    model: SubproblemModel
    psi0: float
    beta: float = DEFAULT_BETA
    sigma0: float = DEFAULT_SIGMA0
    delta: float = DEFAULT_DELTA
    psi_growth_limit: float = DEFAULT_PSI_GROWTH_LIMIT


@dataclass
class SparsaResult:
    """Outcome of one SpaRSA run."""

    p: np.ndarray
    inner_iterations: int = 0
    psi_trace: list[float] = field(default_factory=list)
    first_step_norm: float = 0.0
    last_step_norm: float = 0.0
    termination_reason: str = STOP_MAX_ITERS
    trials: int = 0
    psi_updates: int = 0
    objective_trace: list[float] = field(default_factory=lambda: [0.0])
    max_escalation: float = 1.0

    @property
    def objective(self) -> float:
        """Return Q at the returned iterate."""
        return self.objective_trace[-1]


def accept_test(
    q_new: float, q_old: float, psi: float, step_norm_sq: float, sigma0: float
) -> bool:
    """Return True iff Q_new <= Q_old - (psi sigma0 / 2) ||step||^2."""
    return q_new <= q_old - psi * sigma0 / 2.0 * step_norm_sq


async def async_spectral_psi(
    p_cur: np.ndarray,
    p_prev: np.ndarray,
    grad_cur: np.ndarray,
    grad_prev: np.ndarray,
    reducer: Reducer,
    floor: float = DEFAULT_DELTA,
) -> float:
    """Return max(dp^T dgrad / ||dp||^2, floor) with one length-2 reduction.

    Raises:
        DomainError: If the two iterates coincide
    """
    dp = p_cur - p_prev
    total = await reducer.async_sum(np.array([dp @ (grad_cur - grad_prev), dp @ dp]))
    numerator, denominator = float(total[0]), float(total[1])
    if denominator == 0.0:
        raise DomainError("spectral step undefined for identical iterates")
    return max(numerator / denominator, floor)


async def async_sparsa_solve(
    spec: SubproblemSpec,
    eps1: float = DEFAULT_EPS1,
    max_iters: int = DEFAULT_MAX_INNER_ITERS,
    observer: Callable[[int, np.ndarray, SparsaResult, np.ndarray], bool] | None = None,
) -> SparsaResult:
    """Run SpaRSA from p = 0.

    Args:
        spec: Problem and step-control constants
        eps1: Stop once ||p_{i+1} - p_i|| <= eps1 * ||p_1 - p_0||
        max_iters: Cap on accepted iterations
        observer: Called after every accepted iteration with
            (iteration, p, result, grad); returning True stops the run

    Returns:
        The final iterate and run counters

    Raises:
        SubproblemError: If psi grows beyond psi_growth_limit times its
            value at the start of an iteration without acceptance
    """
    model = spec.model
    reg = model.regularizer
    anchor = model.anchor
    p = np.zeros_like(anchor, dtype=np.float64)
    result = SparsaResult(p=p)
    if max_iters <= 0:
        return result

    grad = model.initial_gradient()
    q_cur = 0.0
    psi = max(spec.psi0, spec.delta)

    for iteration in range(max_iters):
        psi_initial = psi
        while True:
            trial = reg.prox_step(p - grad / psi, anchor, psi)
            step = trial - p
            grad_trial = await model.async_gradient(trial)
            q_trial, step_sq = await model.async_evaluate(trial, step, grad_trial)
            result.trials += 1
            if step_sq == 0.0:
                result.termination_reason = STOP_STATIONARY
                LOGGER.debug("SpaRSA stationary after %d iterations", iteration)
                return result
            if accept_test(q_trial, q_cur, psi, step_sq, spec.sigma0):
                break
            psi *= spec.beta
            if psi > spec.psi_growth_limit * psi_initial:
                LOGGER.error(
                    "SpaRSA step scale grew from %.3e to %.3e without decrease",
                    psi_initial,
                    psi,
                )
                raise SubproblemError(
                    "no sufficient decrease within the step-scale growth limit",
                    psi,
                    psi_initial,
                )

        if q_trial >= q_cur:
            # decrease below the resolution of Q
            result.termination_reason = STOP_STATIONARY
            LOGGER.debug("SpaRSA stalled at Q=%.17g after %d iterations", q_cur, iteration)
            return result

        p_prev, grad_prev = p, grad
        p, grad, q_cur = trial, grad_trial, q_trial
        step_norm = math.sqrt(step_sq)
        result.p = p
        result.inner_iterations += 1
        result.psi_trace.append(psi)
        result.objective_trace.append(q_cur)
        result.max_escalation = max(result.max_escalation, psi / psi_initial)
        if result.inner_iterations == 1:
            result.first_step_norm = step_norm
        result.last_step_norm = step_norm

        if observer is not None and observer(iteration, p, result, grad):
            result.termination_reason = STOP_TARGET
            return result
        if step_norm <= eps1 * result.first_step_norm:
            result.termination_reason = STOP_STEP_RATIO
            return result
        if iteration + 1 == max_iters:
            break
        psi = await async_spectral_psi(
            p, p_prev, grad, grad_prev, model.reducer, spec.delta
        )
        result.psi_updates += 1

    result.termination_reason = STOP_MAX_ITERS
    return result
