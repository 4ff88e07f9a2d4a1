"""Exceptions for the dplbfgs package."""

from __future__ import annotations

from typing import TYPE_CHECKING, Any

if TYPE_CHECKING:
    import numpy as np


class DplbfgsError(Exception):
    """Base exception for all dplbfgs errors."""


class DatasetParseError(DplbfgsError):
    """Exception for malformed LIBSVM input."""

    def __init__(self, message: str, line_number: int) -> None:
        """Initialize the error.

        Args:
            message: Error message
            line_number: One-based line number of the offending line
        """
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class PartitionError(DplbfgsError):
    """Exception for impossible instance or feature partitions."""


class ConfigError(DplbfgsError):
    """Exception for invalid solver or run configuration."""

    def __init__(self, message: str, key: str | None = None) -> None:
        """Initialize the error.

        Args:
            message: Error message
            key: Optional offending configuration key
        """
        super().__init__(message)
        self.key = key


class DomainError(DplbfgsError):
    """Exception for arguments outside an operation's domain."""


class CommError(DplbfgsError):
    """Exception for communication failures."""

    def __init__(self, message: str, label: str | None = None) -> None:
        """Initialize the error.

        Args:
            message: Error message
            label: Optional label of the collective that failed
        """
        super().__init__(message)
        self.label = label


class CommProtocolError(CommError):
    """Exception for collectives called inconsistently across workers."""


class CommTimeoutError(CommError):
    """Exception for a rendezvous that was not reached in time."""

    def __init__(self, message: str, label: str | None, timeout: float) -> None:
        """Initialize the error.

        Args:
            message: Error message
            label: Label of the collective that timed out
            timeout: Timeout in seconds
        """
        super().__init__(message, label)
        self.timeout = timeout


class FactorizationError(DplbfgsError):
    """Exception for an unusable middle matrix of the compact representation."""


class SubproblemError(DplbfgsError):
    """Exception for a SpaRSA iteration that never met sufficient decrease."""

    def __init__(self, message: str, psi: float, psi_initial: float) -> None:
        """Initialize the error.

        Args:
            message: Error message
            psi: Last tried value of psi
            psi_initial: Value of psi at the start of the iteration
        """
        super().__init__(message)
        self.psi = psi
        self.psi_initial = psi_initial


class SolverError(DplbfgsError):
    """Exception for outer-loop failures, carrying the partial run."""

    def __init__(
        self,
        message: str,
        w: np.ndarray | None = None,
        trace: list[Any] | None = None,
    ) -> None:
        """Initialize the error.

        Args:
            message: Error message
            w: Last accepted iterate, if known
            trace: Trace rows recorded before the failure
        """
        super().__init__(message)
        self.w = w
        self.trace = trace if trace is not None else []


class DescentError(SolverError):
    """Exception for a direction with non-negative predicted decrease."""

    def __init__(self, message: str, delta: float) -> None:
        """Initialize the error.

        Args:
            message: Error message
            delta: Offending predicted decrease
        """
        super().__init__(message)
        self.delta = delta


class LineSearchError(SolverError):
    """Exception for a line search that exhausted its backtracks."""

    def __init__(self, message: str, backtracks: int) -> None:
        """Initialize the error.

        Args:
            message: Error message
            backtracks: Number of step halvings tried
        """
        super().__init__(message)
        self.backtracks = backtracks
