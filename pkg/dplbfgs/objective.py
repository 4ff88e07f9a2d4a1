"""Smooth losses, regularizers and the per-worker margin cache.

F(w) = C * sum_i log(1 + exp(-y_i x_i^T w)) + ||w||_1, with the loss part
evaluated only from the local margins z_k = X_k^T w.
"""

from __future__ import annotations

from abc import ABC, abstractmethod

import numpy as np
from scipy.special import expit

from .data import LabeledShard
from .errors import DomainError
from .utils import soft_threshold


def softplus(t: np.ndarray) -> np.ndarray:
    """Return log(1 + exp(t)) without overflow."""
    return np.logaddexp(0.0, t)


def softplus_delta(t: np.ndarray, step: np.ndarray) -> np.ndarray:
    """Return softplus(t + step) - softplus(t) elementwise.

    For |step| <= 1 this is log1p(sigma(t) expm1(step)), accurate to the
    precision of the difference rather than of softplus(t).
    """
    accurate = np.log1p(expit(t) * np.expm1(np.clip(step, -1.0, 1.0)))
    return np.where(np.abs(step) <= 1.0, accurate, softplus(t + step) - softplus(t))


def loss_value_local(shard: LabeledShard, z: np.ndarray, c: float) -> float:
    """Return this worker's logistic loss C * sum_i log(1 + exp(-y_i z_i))."""
    return c * float(np.sum(softplus(-shard.labels * z)))


def grad_local(shard: LabeledShard, z: np.ndarray, c: float) -> np.ndarray:
    """Return X_k (C * (-y_i sigma(-y_i z_i)))_i, this worker's gradient share."""
    weights = -c * shard.labels * expit(-shard.labels * z)
    return shard.matrix @ weights


def hessian_quadform_local(
    shard: LabeledShard, z: np.ndarray, v_dot_x: np.ndarray, c: float
) -> float:
    """Return sum_i C sigma(y_i z_i) sigma(-y_i z_i) (x_i^T v)^2.

    Args:
        shard: Local data
        z: Local margins X_k^T w
        v_dot_x: Local projections X_k^T v of the vector v
        c: Loss weight

    Returns:
        This worker's share of ||v||^2 under the loss Hessian
    """
    margin = shard.labels * z
    curvature = expit(margin) * expit(-margin)
    return c * float(np.sum(curvature * v_dot_x**2))


class SmoothLoss(ABC):
    """Per-worker smooth loss evaluated from the margins z_k = X_k^T w."""

    def __init__(self, shard: LabeledShard, c: float) -> None:
        """Initialize the loss.

        Args:
            shard: Data held by this worker
            c: Loss weight C
        """
        self.shard = shard
        self.c = c

    @abstractmethod
    def value_local(self, z: np.ndarray) -> float:
        """Return f_k at the margins ``z``."""

    @abstractmethod
    def grad_local(self, z: np.ndarray) -> np.ndarray:
        """Return the d-length gradient share at the margins ``z``."""

    def loss_delta_local(
        self, z: np.ndarray, z_dir: np.ndarray, alpha: float
    ) -> float:
        """Return f_k(z + alpha z_dir) - f_k(z)."""
        return self.value_local(z + alpha * z_dir) - self.value_local(z)

    @property
    def has_quadform(self) -> bool:
        """Return True when hessian_quadform_local is available."""
        return False

    def hessian_quadform_local(self, z: np.ndarray, v_dot_x: np.ndarray) -> float:
        """Return this worker's share of ||v||^2 under the loss Hessian."""
        raise NotImplementedError


class LogisticLoss(SmoothLoss):
    """C-weighted logistic loss."""

    def value_local(self, z: np.ndarray) -> float:
        return loss_value_local(self.shard, z, self.c)

    def grad_local(self, z: np.ndarray) -> np.ndarray:
        return grad_local(self.shard, z, self.c)

    def loss_delta_local(
        self, z: np.ndarray, z_dir: np.ndarray, alpha: float
    ) -> float:
        y = self.shard.labels
        return self.c * float(np.sum(softplus_delta(-y * z, -y * (alpha * z_dir))))

    @property
    def has_quadform(self) -> bool:
        return True

    def hessian_quadform_local(self, z: np.ndarray, v_dot_x: np.ndarray) -> float:
        return hessian_quadform_local(self.shard, z, v_dot_x, self.c)


def reg_value_l1(w: np.ndarray) -> float:
    """Return ||w||_1."""
    return float(np.sum(np.abs(w)))


def prox_step_l1(
    u: np.ndarray, w: np.ndarray, psi: float, weight: float = 1.0
) -> np.ndarray:
    """Solve min_p 1/2 ||p - u||^2 + weight * ||w + p||_1 / psi exactly.

    Raises:
        DomainError: If psi is not positive
    """
    if not psi > 0.0:
        raise DomainError(f"prox scale must be positive, got {psi}")
    return soft_threshold(w + u, weight / psi) - w


class Regularizer(ABC):
    """Convex closed proper regularizer g with an exact prox."""

    # False restricts the solver to replicated subproblems with g owned by rank 0
    separable: bool = True

    @abstractmethod
    def value(self, w: np.ndarray) -> float:
        """Return g(w), or the share of g over a slice when separable."""

    @abstractmethod
    def prox_step(self, u: np.ndarray, w: np.ndarray, psi: float) -> np.ndarray:
        """Return argmin_p 1/2 ||p - u||^2 + g(w + p) / psi."""

    def value_delta(self, w: np.ndarray, step: np.ndarray) -> float:
        """Return g(w + step) - g(w)."""
        return self.value(w + step) - self.value(w)


class L1Regularizer(Regularizer):
    """g(w) = weight * ||w||_1."""

    def __init__(self, weight: float = 1.0) -> None:
        self.weight = weight

    def value(self, w: np.ndarray) -> float:
        return self.weight * reg_value_l1(w)

    def prox_step(self, u: np.ndarray, w: np.ndarray, psi: float) -> np.ndarray:
        return prox_step_l1(u, w, psi, self.weight)

    def value_delta(self, w: np.ndarray, step: np.ndarray) -> float:
        moved = w + step
        # no sign change: |w + step| - |w| = sign(w) step exactly
        change = np.where(
            w * moved > 0.0, np.sign(w) * step, np.abs(moved) - np.abs(w)
        )
        return self.weight * float(np.sum(change))


class NullRegularizer(Regularizer):
    """g = 0; the prox is the identity."""

    def value(self, w: np.ndarray) -> float:
        return 0.0

    def prox_step(self, u: np.ndarray, w: np.ndarray, psi: float) -> np.ndarray:
        if not psi > 0.0:
            raise DomainError(f"prox scale must be positive, got {psi}")
        return np.array(u, dtype=np.float64)

    def value_delta(self, w: np.ndarray, step: np.ndarray) -> float:
        return 0.0


def delta_term(
    grad_dot_p: float,
    w: np.ndarray,
    p: np.ndarray,
    regularizer: Regularizer | None = None,
) -> float:
    """Return the predicted decrease grad^T p + g(w + p) - g(w).

    For separable g, ``w`` and ``p`` may be one feature slice and the
    results summed across workers.
    """
    reg = regularizer if regularizer is not None else L1Regularizer()
    return grad_dot_p + reg.value_delta(w, p)


class LossCache:
    """Local margins z_k = X_k^T w and the line-search direction z_dir_k = X_k^T p."""

    def __init__(self, shard: LabeledShard, w: np.ndarray) -> None:
        self.shard = shard
        self.z = shard.matrix.T @ w
        self.z_dir = np.zeros(shard.n_k)

    def set_direction(self, p: np.ndarray) -> np.ndarray:
        """Compute and store X_k^T p."""
        self.z_dir = self.shard.matrix.T @ p
        return self.z_dir

    def project(self, v: np.ndarray) -> np.ndarray:
        """Return X_k^T v without touching the cache."""
        return self.shard.matrix.T @ v

    def accept(self, alpha: float) -> None:
        """Apply z_k <- z_k + alpha z_dir_k after an accepted step."""
        self.z += alpha * self.z_dir

    def refresh(self, w: np.ndarray) -> None:
        """Recompute z_k from scratch."""
        self.z = self.shard.matrix.T @ w
