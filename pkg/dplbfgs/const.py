"""Constants for the dplbfgs package."""

from __future__ import annotations

import logging
from typing import Final

# Domain
DOMAIN: Final = "dplbfgs"
DEFAULT_NAME: Final = "Distributed proximal LBFGS"
VERSION: Final = "0.1.0"

# Logger
LOGGER = logging.getLogger(__package__)

# Configuration keys
CONF_THETA: Final = "theta"
CONF_BETA: Final = "beta"
CONF_SIGMA0: Final = "sigma0"
CONF_SIGMA1: Final = "sigma1"
CONF_MEMORY: Final = "m"
CONF_DELTA: Final = "delta"
CONF_EPS1: Final = "eps1"
CONF_C: Final = "c"
CONF_MAX_OUTER_ITERS: Final = "max_outer_iters"
CONF_MAX_INNER_ITERS: Final = "max_inner_iters"
CONF_MAX_BACKTRACKS: Final = "max_backtracks"
CONF_MODE: Final = "mode"
CONF_GAMMA_RULE: Final = "gamma_rule"
CONF_PSI_GROWTH_LIMIT: Final = "psi_growth_limit"
CONF_FSTAR: Final = "fstar"
CONF_REL_TOL: Final = "rel_tol"
CONF_GRAD_TOL: Final = "grad_tol"

CONF_DATA: Final = "data"
CONF_WORKERS: Final = "k"
CONF_METHOD: Final = "method"
CONF_T_INITIAL: Final = "t_initial"
CONF_T_BYTE: Final = "t_byte"
CONF_OUT: Final = "out"
CONF_SEED: Final = "seed"
CONF_BACKEND: Final = "backend"
CONF_DATASET_KIND: Final = "dataset_kind"
CONF_COMM_TIMEOUT: Final = "comm_timeout"

# Default values
DEFAULT_THETA: Final = 0.5
DEFAULT_BETA: Final = 2.0
DEFAULT_SIGMA0: Final = 1e-2
DEFAULT_SIGMA1: Final = 1e-4
DEFAULT_MEMORY: Final = 10
DEFAULT_DELTA: Final = 1e-10
DEFAULT_EPS1: Final = 1e-2
DEFAULT_C: Final = 1.0
DEFAULT_MAX_OUTER_ITERS: Final = 500
DEFAULT_MAX_INNER_ITERS: Final = 100
DEFAULT_MAX_BACKTRACKS: Final = 50
DEFAULT_PSI_GROWTH_LIMIT: Final = 1e3
DEFAULT_REL_TOL: Final = 1e-3
DEFAULT_GRAD_TOL: Final = 1e-8
REFERENCE_GRAD_TOL: Final = 1e-10
REFERENCE_STALL_GRAD_TOL: Final = 1e-6

# Cost-model figures (plausible LAN values)
DEFAULT_T_INITIAL: Final = 1e-3  # seconds per connection
DEFAULT_T_BYTE: Final = 1e-9  # seconds per byte
DEFAULT_WORKERS: Final = 4
DEFAULT_SEED: Final = 0
DEFAULT_COMM_TIMEOUT: Final = 30.0  # seconds per rendezvous

# Subproblem modes
MODE_PARTITIONED: Final = "partitioned"
MODE_REPLICATED: Final = "replicated"

# Scaling rules for gamma_t
GAMMA_CURVATURE: Final = "curvature"
GAMMA_PRINTED: Final = "printed"

# Methods
METHOD_DPLBFGS: Final = "dplbfgs"
METHOD_SPARSA: Final = "sparsa"

# Communication backends
BACKEND_SIMULATOR: Final = "simulator"
BACKEND_SOCKET: Final = "socket"

# Synthetic desk datasets
DATASET_SPARSE: Final = "sparse"
DATASET_DENSE: Final = "dense"

# Bytes per transmitted float
BYTES_PER_VALUE: Final = 8

# Label mapping applied by the LIBSVM reader
DEFAULT_LABEL_MAP: Final[dict[float, int]] = {
    0.0: -1,
    -1.0: -1,
    1.0: 1,
    2.0: 1,
}

# Numerical thresholds
SINGULAR_PIVOT_RTOL: Final = 1e-12
STATIONARY_STEP_RTOL: Final = 1e-12
UNIT_STEP_SOFT_TARGET: Final = 0.80

# Output files
TRACE_FILENAME: Final = "trace.csv"
SUMMARY_FILENAME: Final = "summary.json"
SWEEP_FILENAME: Final = "eps1_sweep.csv"
STEP_SIZES_FILENAME: Final = "step_sizes.csv"
COMPARISON_FILENAME: Final = "comparison.csv"
FSTAR_SUFFIX: Final = ".fstar"

# CLI exit codes
EXIT_OK: Final = 0
EXIT_FAILURE: Final = 1
EXIT_USAGE: Final = 2
EXIT_NOT_CONVERGED: Final = 3

# Collective labels (per-source ledger counters)
LABEL_OBJECTIVE: Final = "objective"
LABEL_GRADIENT: Final = "gradient"
LABEL_QUADFORM: Final = "quadform"
LABEL_PAIR: Final = "pair"
LABEL_APPLY_H: Final = "apply_h"
LABEL_SPARSA: Final = "sparsa"
LABEL_GATHER: Final = "gather"
LABEL_DELTA: Final = "delta"
LABEL_LINE_SEARCH: Final = "line_search"

# Outer-loop termination reasons
REASON_TARGET: Final = "target_reached"
REASON_STATIONARY: Final = "stationary"
REASON_MAX_OUTER: Final = "max_outer_iters"
REASON_NUMERICALLY_STATIONARY: Final = "numerically_stationary"
CONVERGED_REASONS: Final = frozenset(
    {REASON_TARGET, REASON_STATIONARY, REASON_NUMERICALLY_STATIONARY}
)

# Grace period for symmetric failures to surface on every worker
FAILURE_GRACE_SECONDS: Final = 0.1

# Reference (F*) runs
REFERENCE_MAX_OUTER_ITERS: Final = 5000

# Synthetic desk datasets used when no LIBSVM file is given
DESK_SPARSE_N: Final = 10000
DESK_SPARSE_D: Final = 5000
DESK_SPARSE_DENSITY: Final = 0.01
DESK_SPARSE_ZIPF: Final = 1.0
DESK_DENSE_N: Final = 3000
DESK_DENSE_D: Final = 2000
DESK_DENSE_CONDITION: Final = 1e3
# little label noise and a wide planted support keep w* far from 0
DESK_FLIP: Final = 0.02
DESK_SUPPORT: Final = 0.25

# Benchmark sweeps
DEFAULT_EPS1_SWEEP: Final = (1e-1, 1e-2, 1e-3)
