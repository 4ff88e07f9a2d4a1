"""Small numerical and bookkeeping helpers for the dplbfgs package."""

from __future__ import annotations

import hashlib
import json
import math
from typing import Any

import numpy as np

from .const import LOGGER


def soft_threshold(v: np.ndarray, threshold: float) -> np.ndarray:
    """Apply the soft-thresholding (shrinkage) operator elementwise.

    Args:
        v: Input vector
        threshold: Non-negative threshold

    Returns:
        sign(v) * max(|v| - threshold, 0)
    """
    return np.sign(v) * np.maximum(np.abs(v) - threshold, 0.0)


def fingerprint(payload: dict[str, Any]) -> str:
    """Return a stable short hash of a JSON-serializable mapping.

    Args:
        payload: Mapping with JSON-serializable values

    Returns:
        Hex digest (16 characters) independent of key order
    """
    encoded = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(encoded).hexdigest()[:16]


def log2_workers(size: int) -> float:
    """Return log2(K), the number of latency hops charged per allreduce."""
    if size <= 1:
        return 0.0
    return math.log2(size)


def nnz(w: np.ndarray) -> int:
    """Return the number of nonzero coefficients of an iterate."""
    return int(np.count_nonzero(w))


def relative_error(value: float, reference: float | None) -> float:
    """Return (value - reference) / |reference|, or NaN without a reference.

    Args:
        value: Objective value
        reference: Optimal objective value F*, if known

    Returns:
        Relative objective error
    """
    if reference is None:
        return math.nan
    if reference == 0.0:
        LOGGER.debug("Reference objective is zero, reporting absolute error")
        return value
    return (value - reference) / abs(reference)
