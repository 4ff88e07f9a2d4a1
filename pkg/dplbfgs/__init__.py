"""Distributed proximal LBFGS for L1-regularized empirical risk minimization."""

from __future__ import annotations

from .config import RunSpec, SolverConfig
from .const import VERSION
from .coordinator import SolveCoordinator, async_solve, solve
from .data import LabeledDataset, load_libsvm, parse_libsvm
from .errors import DplbfgsError
from .solver import SolverResult, TraceRow

__version__ = VERSION

__all__ = [
    "DplbfgsError",
    "LabeledDataset",
    "RunSpec",
    "SolveCoordinator",
    "SolverConfig",
    "SolverResult",
    "TraceRow",
    "__version__",
    "async_solve",
    "load_libsvm",
    "parse_libsvm",
    "solve",
]
