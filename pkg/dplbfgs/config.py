"""Configuration schemas for the dplbfgs package."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import voluptuous as vol

from .const import (
    BACKEND_SIMULATOR,
    BACKEND_SOCKET,
    CONF_BACKEND,
    CONF_BETA,
    CONF_C,
    CONF_COMM_TIMEOUT,
    CONF_DATA,
    CONF_DATASET_KIND,
    CONF_DELTA,
    CONF_EPS1,
    CONF_FSTAR,
    CONF_GAMMA_RULE,
    CONF_GRAD_TOL,
    CONF_MAX_BACKTRACKS,
    CONF_MAX_INNER_ITERS,
    CONF_MAX_OUTER_ITERS,
    CONF_MEMORY,
    CONF_METHOD,
    CONF_MODE,
    CONF_OUT,
    CONF_PSI_GROWTH_LIMIT,
    CONF_REL_TOL,
    CONF_SEED,
    CONF_SIGMA0,
    CONF_SIGMA1,
    CONF_T_BYTE,
    CONF_T_INITIAL,
    CONF_THETA,
    CONF_WORKERS,
    DATASET_DENSE,
    DATASET_SPARSE,
    DEFAULT_BETA,
    DEFAULT_C,
    DEFAULT_COMM_TIMEOUT,
    DEFAULT_DELTA,
    DEFAULT_EPS1,
    DEFAULT_GRAD_TOL,
    DEFAULT_MAX_BACKTRACKS,
    DEFAULT_MAX_INNER_ITERS,
    DEFAULT_MAX_OUTER_ITERS,
    DEFAULT_MEMORY,
    DEFAULT_PSI_GROWTH_LIMIT,
    DEFAULT_REL_TOL,
    DEFAULT_SEED,
    DEFAULT_SIGMA0,
    DEFAULT_SIGMA1,
    DEFAULT_T_BYTE,
    DEFAULT_T_INITIAL,
    DEFAULT_THETA,
    DEFAULT_WORKERS,
    GAMMA_CURVATURE,
    GAMMA_PRINTED,
    LOGGER,
    METHOD_DPLBFGS,
    METHOD_SPARSA,
    MODE_PARTITIONED,
    MODE_REPLICATED,
)
from .errors import ConfigError
from .utils import fingerprint

_OPEN_UNIT = vol.Range(min=0.0, max=1.0, min_included=False, max_included=False)
_POSITIVE = vol.Range(min=0.0, min_included=False)
_NON_NEGATIVE = vol.Range(min=0.0)

SOLVER_CONFIG_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_THETA, default=DEFAULT_THETA): vol.All(
            vol.Coerce(float), _OPEN_UNIT
        ),
        vol.Optional(CONF_BETA, default=DEFAULT_BETA): vol.All(
            vol.Coerce(float), vol.Range(min=1.0, min_included=False)
        ),
        vol.Optional(CONF_SIGMA0, default=DEFAULT_SIGMA0): vol.All(
            vol.Coerce(float), _OPEN_UNIT
        ),
        vol.Optional(CONF_SIGMA1, default=DEFAULT_SIGMA1): vol.All(
            vol.Coerce(float), _OPEN_UNIT
        ),
        vol.Optional(CONF_MEMORY, default=DEFAULT_MEMORY): vol.All(
            vol.Coerce(int), vol.Range(min=1)
        ),
        vol.Optional(CONF_DELTA, default=DEFAULT_DELTA): vol.All(
            vol.Coerce(float), _POSITIVE
        ),
        vol.Optional(CONF_EPS1, default=DEFAULT_EPS1): vol.All(
            vol.Coerce(float), _POSITIVE
        ),
        vol.Optional(CONF_C, default=DEFAULT_C): vol.All(vol.Coerce(float), _POSITIVE),
        vol.Optional(CONF_MAX_OUTER_ITERS, default=DEFAULT_MAX_OUTER_ITERS): vol.All(
            vol.Coerce(int), vol.Range(min=0)
        ),
        vol.Optional(CONF_MAX_INNER_ITERS, default=DEFAULT_MAX_INNER_ITERS): vol.All(
            vol.Coerce(int), vol.Range(min=0)
        ),
        vol.Optional(CONF_MAX_BACKTRACKS, default=DEFAULT_MAX_BACKTRACKS): vol.All(
            vol.Coerce(int), vol.Range(min=1)
        ),
        vol.Optional(CONF_MODE, default=MODE_PARTITIONED): vol.In(
            [MODE_PARTITIONED, MODE_REPLICATED]
        ),
        vol.Optional(CONF_GAMMA_RULE, default=GAMMA_CURVATURE): vol.In(
            [GAMMA_CURVATURE, GAMMA_PRINTED]
        ),
        vol.Optional(
            CONF_PSI_GROWTH_LIMIT, default=DEFAULT_PSI_GROWTH_LIMIT
        ): vol.All(vol.Coerce(float), vol.Range(min=1.0, min_included=False)),
        vol.Optional(CONF_FSTAR, default=None): vol.Any(None, vol.Coerce(float)),
        vol.Optional(CONF_REL_TOL, default=DEFAULT_REL_TOL): vol.All(
            vol.Coerce(float), _POSITIVE
        ),
        vol.Optional(CONF_GRAD_TOL, default=DEFAULT_GRAD_TOL): vol.All(
            vol.Coerce(float), _NON_NEGATIVE
        ),
    }
)

RUN_SPEC_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_DATA, default=None): vol.Any(None, vol.Coerce(Path)),
        vol.Optional(CONF_WORKERS, default=DEFAULT_WORKERS): vol.All(
            vol.Coerce(int), vol.Range(min=1)
        ),
        vol.Optional(CONF_METHOD, default=METHOD_DPLBFGS): vol.In(
            [METHOD_DPLBFGS, METHOD_SPARSA]
        ),
        vol.Optional(CONF_T_INITIAL, default=DEFAULT_T_INITIAL): vol.All(
            vol.Coerce(float), _NON_NEGATIVE
        ),
        vol.Optional(CONF_T_BYTE, default=DEFAULT_T_BYTE): vol.All(
            vol.Coerce(float), _NON_NEGATIVE
        ),
        vol.Optional(CONF_OUT, default=Path("results")): vol.Coerce(Path),
        vol.Optional(CONF_SEED, default=DEFAULT_SEED): vol.Coerce(int),
        vol.Optional(CONF_BACKEND, default=BACKEND_SIMULATOR): vol.In(
            [BACKEND_SIMULATOR, BACKEND_SOCKET]
        ),
        vol.Optional(CONF_DATASET_KIND, default=DATASET_SPARSE): vol.In(
            [DATASET_SPARSE, DATASET_DENSE]
        ),
        vol.Optional(CONF_COMM_TIMEOUT, default=DEFAULT_COMM_TIMEOUT): vol.All(
            vol.Coerce(float), _POSITIVE
        ),
    }
)


def _validate(schema: vol.Schema, data: dict[str, Any]) -> dict[str, Any]:
    """Run a schema and translate voluptuous errors into ConfigError."""
    try:
        return schema(data)
    except vol.Invalid as err:
        key = str(err.path[0]) if err.path else None
        LOGGER.error("Invalid configuration for %s: %s", key, err)
        raise ConfigError(str(err), key) from err


@dataclass(frozen=True)
class SolverConfig:
    """Validated solver parameters."""

    theta: float = DEFAULT_THETA
    beta: float = DEFAULT_BETA
    sigma0: float = DEFAULT_SIGMA0
    sigma1: float = DEFAULT_SIGMA1
    m: int = DEFAULT_MEMORY
    delta: float = DEFAULT_DELTA
    eps1: float = DEFAULT_EPS1
    c: float = DEFAULT_C
    max_outer_iters: int = DEFAULT_MAX_OUTER_ITERS
    max_inner_iters: int = DEFAULT_MAX_INNER_ITERS
    max_backtracks: int = DEFAULT_MAX_BACKTRACKS
    mode: str = MODE_PARTITIONED
    gamma_rule: str = GAMMA_CURVATURE
    psi_growth_limit: float = DEFAULT_PSI_GROWTH_LIMIT
    fstar: float | None = None
    rel_tol: float = DEFAULT_REL_TOL
    grad_tol: float = DEFAULT_GRAD_TOL

    @classmethod
    def from_mapping(cls, data: dict[str, Any] | None = None) -> SolverConfig:
        """Validate a mapping of CONF_* keys and build a config.

        Raises:
            ConfigError: If a value is out of range or a key is unknown
        """
        return cls(**_validate(SOLVER_CONFIG_SCHEMA, dict(data or {})))

    def as_dict(self) -> dict[str, Any]:
        """Return the config as a plain mapping."""
        return dataclasses.asdict(self)

    def replace(self, **overrides: Any) -> SolverConfig:
        """Return a validated copy with some values replaced."""
        return SolverConfig.from_mapping({**self.as_dict(), **overrides})

    def fingerprint(self) -> str:
        """Return a stable hash of the parameters that change the optimum."""
        return fingerprint({CONF_C: self.c})


@dataclass(frozen=True)
class RunSpec:
    """One benchmark invocation: dataset, workers, method and cost model."""

    data: Path | None = None
    k: int = DEFAULT_WORKERS
    method: str = METHOD_DPLBFGS
    t_initial: float = DEFAULT_T_INITIAL
    t_byte: float = DEFAULT_T_BYTE
    out: Path = Path("results")
    seed: int = DEFAULT_SEED
    backend: str = BACKEND_SIMULATOR
    dataset_kind: str = DATASET_SPARSE
    comm_timeout: float = DEFAULT_COMM_TIMEOUT
    solver: SolverConfig = field(default_factory=SolverConfig)

    @classmethod
    def from_mapping(
        cls, data: dict[str, Any] | None = None, solver: SolverConfig | None = None
    ) -> RunSpec:
        """Validate run-level keys and attach a solver config.

        Raises:
            ConfigError: If a value is out of range or a key is unknown
        """
        validated = _validate(RUN_SPEC_SCHEMA, dict(data or {}))
        return cls(**validated, solver=solver or SolverConfig())

    def replace(self, **overrides: Any) -> RunSpec:
        """Return a copy with run-level values replaced."""
        return dataclasses.replace(self, **overrides)
