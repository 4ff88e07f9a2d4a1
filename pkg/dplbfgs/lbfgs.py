"""Compact limited-memory BFGS model H = gamma I - U M^-1 U^T.

U = [gamma S, Y] and M = [[gamma S^T S, L], [L^T, -D]], with D the diagonal
and L the strictly lower triangle of S^T Y. Pairs are stored as the rows of
the caller's slice (one feature range, or the full vector when replicated);
inner products over the slice are completed through a Reducer.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .comm import LocalReducer, Reducer
from .const import (
    DEFAULT_DELTA,
    DEFAULT_MEMORY,
    GAMMA_CURVATURE,
    GAMMA_PRINTED,
    LOGGER,
    SINGULAR_PIVOT_RTOL,
)
from .errors import DomainError, FactorizationError


class HessianHandle(ABC):
    """Symmetric positive definite operator used by the subproblem."""

    @property
    @abstractmethod
    def gamma(self) -> float:
        """Return the scalar used to seed the first spectral step."""

    @abstractmethod
    async def async_apply(self, p: np.ndarray) -> np.ndarray:
        """Return (H p) on the caller's slice."""


class ScaledIdentity(HessianHandle):
    """H = a I."""

    def __init__(self, a: float) -> None:
        if not a > 0.0:
            raise DomainError(f"identity scale must be positive, got {a}")
        self._a = a

    @property
    def gamma(self) -> float:
        return self._a

    async def async_apply(self, p: np.ndarray) -> np.ndarray:
        return self._a * p


@dataclass
class _MiddleFactor:
    """Cholesky factor of the Schur complement gamma S^T S + L D^-1 L^T."""

    schur: tuple[np.ndarray, bool]
    lower: np.ndarray
    diag: np.ndarray

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve M x = rhs by block elimination."""
        k = self.diag.size
        b1, b2 = rhs[:k], rhs[k:]
        x1 = cho_solve(self.schur, b1 + self.lower @ (b2 / self.diag))
        x2 = (self.lower.T @ x1 - b2) / self.diag
        return np.concatenate([x1, x2])


class LbfgsMemory:
    """Safeguarded curvature pairs and the factorized middle matrix."""

    def __init__(
        self,
        m: int = DEFAULT_MEMORY,
        delta: float = DEFAULT_DELTA,
        gamma_rule: str = GAMMA_CURVATURE,
    ) -> None:
        """Initialize an empty memory.

        Args:
            m: History cap
            delta: Safeguard threshold on s^T y >= delta s^T s
            gamma_rule: "curvature" (s^T y / s^T s) or "printed" (s^T s / s^T y)
        """
        if gamma_rule not in (GAMMA_CURVATURE, GAMMA_PRINTED):
            raise DomainError(f"unknown gamma rule {gamma_rule!r}")
        self.m = m
        self.delta = delta
        self.gamma_rule = gamma_rule
        self._s = np.zeros((0, 0))
        self._y = np.zeros((0, 0))
        self._ss = np.zeros((0, 0))
        # sy[i, j] = s_i^T y_j for i >= j
        self._sy = np.zeros((0, 0))
        self.gamma = 1.0
        self._factor: _MiddleFactor | None = None

    @property
    def size(self) -> int:
        """Return m~, the number of stored pairs."""
        return self._ss.shape[0]

    @property
    def empty(self) -> bool:
        """Return True when no pair is stored."""
        return self.size == 0

    @property
    def sts(self) -> np.ndarray:
        """Return S^T S."""
        return self._ss.copy()

    @property
    def d_diag(self) -> np.ndarray:
        """Return the diagonal of D."""
        return np.diag(self._sy).copy()

    @property
    def l_lower(self) -> np.ndarray:
        """Return L, the strictly lower triangle of S^T Y."""
        return np.tril(self._sy, -1)

    def _gamma_from(self, sty: float, sts: float) -> float:
        if self.gamma_rule == GAMMA_PRINTED:
            return sts / sty
        return sty / sts

    async def async_try_push_pair(
        self, s: np.ndarray, y: np.ndarray, reducer: Reducer | None = None
    ) -> bool:
        """Admit (s, y) if s^T y >= delta s^T s.

        All inner products involving the new pair go through one reduction
        of length 2 m~ + 2 (m~ counted before admission).

        Returns:
            True if the pair was admitted
        """
        reducer = reducer or LocalReducer()
        k = self.size
        partial = np.zeros(2 * k + 2)
        partial[0] = s @ y
        partial[1] = s @ s
        if k:
            partial[2 : 2 + k] = self._s.T @ s
            partial[2 + k :] = self._y.T @ s
        total = await reducer.async_sum(partial)
        sty, sts = float(total[0]), float(total[1])
        s_old_s, y_old_s = total[2 : 2 + k], total[2 + k :]

        if sts <= 0.0:
            LOGGER.debug("Rejected curvature pair: zero step")
            return False
        if sty < self.delta * sts:
            LOGGER.debug(
                "Rejected curvature pair: s^T y = %.3e < delta s^T s = %.3e",
                sty,
                self.delta * sts,
            )
            return False

        previous = (self._s, self._y, self._ss, self._sy, self.gamma, self._factor)
        ss = np.zeros((k + 1, k + 1))
        ss[:k, :k] = self._ss
        ss[k, :k] = ss[:k, k] = s_old_s
        ss[k, k] = sts
        sy = np.zeros((k + 1, k + 1))
        sy[:k, :k] = self._sy
        sy[k, :k] = y_old_s
        sy[k, k] = sty
        if k:
            self._s = np.column_stack([self._s, s])
            self._y = np.column_stack([self._y, y])
        else:
            self._s = s.reshape(-1, 1).astype(np.float64)
            self._y = y.reshape(-1, 1).astype(np.float64)
        self._ss, self._sy = ss, sy
        if self.size > self.m:
            self._drop_oldest()
        self.gamma = self._gamma_from(sty, sts)
        if not self._refactor():
            LOGGER.warning(
                "Rejected curvature pair: middle matrix singular (gamma=%.3e)", self.gamma
            )
            self._s, self._y, self._ss, self._sy, self.gamma, self._factor = previous
            return False
        return True

    def _drop_oldest(self) -> None:
        self._s = self._s[:, 1:]
        self._y = self._y[:, 1:]
        self._ss = self._ss[1:, 1:]
        self._sy = self._sy[1:, 1:]

    def middle_matrix(self) -> np.ndarray:
        """Return M as a dense 2m~ x 2m~ matrix."""
        lower = self.l_lower
        return np.block(
            [
                [self.gamma * self._ss, lower],
                [lower.T, -np.diag(self.d_diag)],
            ]
        )

    def _refactor(self) -> bool:
        """Factorize M, dropping the oldest pair while it is numerically singular.

        Returns:
            False if even the newest pair alone cannot be factorized
        """
        while self.size:
            diag = self.d_diag
            lower = self.l_lower
            schur = self.gamma * self._ss + lower @ (lower.T / diag[:, None])
            norm = np.linalg.norm(self.middle_matrix())
            try:
                factor = cho_factor(schur, lower=True)
            except LinAlgError:
                factor = None
            if factor is not None and np.min(np.diag(factor[0])) ** 2 > (
                SINGULAR_PIVOT_RTOL * norm
            ):
                self._factor = _MiddleFactor(factor, lower, diag)
                return True
            if self.size == 1:
                break
            LOGGER.warning(
                "Middle matrix numerically singular with %d pairs, dropping oldest",
                self.size,
            )
            self._drop_oldest()
        self._factor = None
        return False

    def clear(self) -> None:
        """Forget every pair."""
        rows = self._s.shape[0]
        self._s = np.zeros((rows, 0))
        self._y = np.zeros((rows, 0))
        self._ss = np.zeros((0, 0))
        self._sy = np.zeros((0, 0))
        self._factor = None

    async def async_apply_h(
        self, p: np.ndarray, reducer: Reducer | None = None
    ) -> np.ndarray:
        """Return the slice of gamma p - U M^-1 U^T p.

        U^T p is completed with one reduction of length 2 m~.
        """
        if self._factor is None:
            raise FactorizationError("apply_h called without a factorized memory")
        reducer = reducer or LocalReducer()
        partial = np.concatenate([self.gamma * (self._s.T @ p), self._y.T @ p])
        utp = await reducer.async_sum(partial)
        x = self._factor.solve(utp)
        k = self.size
        return self.gamma * p - (self.gamma * (self._s @ x[:k]) + self._y @ x[k:])

    def dense(self) -> np.ndarray:
        """Materialize H from full-length pairs (diagnostics only)."""
        if self._factor is None:
            raise FactorizationError("dense called without a factorized memory")
        u = np.hstack([self.gamma * self._s, self._y])
        m_inv_ut = np.column_stack([self._factor.solve(row) for row in u])
        return self.gamma * np.eye(u.shape[0]) - u @ m_inv_ut

    def handle(self, reducer: Reducer | None = None) -> LbfgsHessian:
        """Return a HessianHandle bound to ``reducer``."""
        return LbfgsHessian(self, reducer or LocalReducer())


class LbfgsHessian(HessianHandle):
    """HessianHandle view of an LbfgsMemory."""

    def __init__(self, memory: LbfgsMemory, reducer: Reducer) -> None:
        self._memory = memory
        self._reducer = reducer

    @property
    def gamma(self) -> float:
        return self._memory.gamma

    async def async_apply(self, p: np.ndarray) -> np.ndarray:
        return await self._memory.async_apply_h(p, self._reducer)


def compute_a0(grad: np.ndarray, quadform: float) -> tuple[float, bool]:
    """Return the initial scale ||grad||^2_Hess / ||grad||^2.

    Returns:
        (a0, fallback) where fallback is True when a0 = 1 was substituted
        for a zero gradient or a zero quadform

    Raises:
        DomainError: If quadform is negative
    """
    if quadform < 0.0:
        raise DomainError(f"Hessian quadform must be nonnegative, got {quadform}")
    norm_sq = float(grad @ grad)
    if norm_sq == 0.0 or quadform == 0.0:
        LOGGER.debug("Degenerate initial scale, using a0 = 1")
        return 1.0, True
    return quadform / norm_sq, False
