"""Pytest configuration for dplbfgs tests."""

from __future__ import annotations

import asyncio
import os
from collections.abc import Awaitable, Callable
from typing import Any

import numpy as np
import pytest
import pytest_socket

from dplbfgs.comm import CommWorld, WorkerComm
from dplbfgs.config import SolverConfig
from dplbfgs.data import (
    LabeledDataset,
    LabeledShard,
    make_sparse_dataset,
    parse_libsvm,
    partition_features,
    partition_instances,
)
from dplbfgs.solver import SolverResult, WorkerSolver

if os.name == "nt":
    def _disable_socket_windows(*_args, **_kwargs) -> None:
        """Keep sockets enabled on Windows so asyncio can create the event loop."""
        pytest_socket.enable_socket()

    pytest_socket.disable_socket = _disable_socket_windows


def pytest_addoption(parser: pytest.Parser) -> None:
    """Register the switch for desk-scale checks."""
    parser.addoption(
        "--run-slow", action="store_true", default=False, help="run slow desk checks"
    )


def pytest_collection_modifyitems(config: pytest.Config, items: list[pytest.Item]) -> None:
    """Skip tests marked slow unless --run-slow is given."""
    if config.getoption("--run-slow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.hookimpl(tryfirst=True)
def pytest_configure(config: pytest.Config) -> None:
    """Ensure pytest-asyncio has an explicit default loop scope."""
    try:
        current_scope = config.getini("asyncio_default_fixture_loop_scope")
    except (KeyError, ValueError):
        current_scope = None
    if not current_scope:
        config._inicache["asyncio_default_fixture_loop_scope"] = "function"


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded generator shared by property tests."""
    return np.random.default_rng(20240611)


@pytest.fixture
def single_instance() -> LabeledDataset:
    """One instance x = e1 with label +1 in three dimensions."""
    return parse_libsvm(["+1 1:1"], n_features=3, name="single")


@pytest.fixture
def tiny_dataset() -> LabeledDataset:
    """20 instances, 5 features."""
    return make_sparse_dataset(20, 5, density=0.6, seed=3)


@pytest.fixture
def small_dataset() -> LabeledDataset:
    """300 instances, 60 features, sparse +-1 entries."""
    return make_sparse_dataset(300, 60, density=0.1, seed=7)


def shard_of(dataset: LabeledDataset) -> LabeledShard:
    """Return the whole dataset as a single shard."""
    return partition_instances(dataset, 1)[0]


def simulated_world(size: int, *, t_initial: float = 1e-3, t_byte: float = 1e-9,
                    timeout: float = 5.0) -> CommWorld:
    """Return an in-process world with test-friendly timeouts."""
    return CommWorld.simulated(size, t_initial, t_byte, timeout)


async def run_ranks(
    world: CommWorld, body: Callable[[WorkerComm], Awaitable[Any]]
) -> tuple[list[Any], list[WorkerComm]]:
    """Run ``body`` once per rank concurrently and return results and handles."""
    comms = [world.worker(rank) for rank in range(world.size)]
    results = await asyncio.gather(
        *(body(comm) for comm in comms), return_exceptions=True
    )
    return list(results), comms


async def run_workers(
    dataset: LabeledDataset,
    config: SolverConfig,
    size: int,
    worker_cls: type[WorkerSolver] = WorkerSolver,
) -> tuple[list[SolverResult], list[WorkerComm]]:
    """Solve with ``size`` simulated workers and return every worker's result."""
    world = simulated_world(size)
    shards = partition_instances(dataset, size)
    partition = partition_features(dataset.d, size)
    comms = [world.worker(rank) for rank in range(size)]
    workers = [
        worker_cls(comms[rank], shards[rank], partition, config) for rank in range(size)
    ]
    results = await asyncio.gather(*(worker.async_run() for worker in workers))
    return list(results), comms
