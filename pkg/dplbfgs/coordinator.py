"""Spawns the K workers of one run and collects worker 0's result."""

from __future__ import annotations

import asyncio

from .baseline import BaselineWorker
from .comm import CommWorld
from .config import SolverConfig
from .const import (
    BACKEND_SIMULATOR,
    BACKEND_SOCKET,
    DEFAULT_COMM_TIMEOUT,
    DEFAULT_T_BYTE,
    DEFAULT_T_INITIAL,
    FAILURE_GRACE_SECONDS,
    LOGGER,
    METHOD_DPLBFGS,
    METHOD_SPARSA,
)
from .data import LabeledDataset, partition_features, partition_instances
from .errors import ConfigError
from .solver import SolverResult, WorkerSolver

WORKER_CLASSES: dict[str, type[WorkerSolver]] = {
    METHOD_DPLBFGS: WorkerSolver,
    METHOD_SPARSA: BaselineWorker,
}


class SolveCoordinator:
    """Runs one method on one dataset across K lockstep workers."""

    def __init__(
        self,
        dataset: LabeledDataset,
        config: SolverConfig,
        *,
        size: int = 1,
        method: str = METHOD_DPLBFGS,
        backend: str = BACKEND_SIMULATOR,
        t_initial: float = DEFAULT_T_INITIAL,
        t_byte: float = DEFAULT_T_BYTE,
        timeout: float = DEFAULT_COMM_TIMEOUT,
    ) -> None:
        """Initialize the coordinator.

        Args:
            dataset: Full dataset, partitioned here by instances
            config: Solver parameters
            size: Number of workers K
            method: "dplbfgs" or "sparsa"
            backend: "simulator" or "socket"
            t_initial: Seconds per connection in the cost model
            t_byte: Seconds per byte in the cost model
            timeout: Seconds a worker waits at a rendezvous
        """
        if method not in WORKER_CLASSES:
            raise ConfigError(f"unknown method {method!r}", "method")
        if backend not in (BACKEND_SIMULATOR, BACKEND_SOCKET):
            raise ConfigError(f"unknown backend {backend!r}", "backend")
        self.dataset = dataset
        self.config = config
        self.size = size
        self.method = method
        self.backend = backend
        self.t_initial = t_initial
        self.t_byte = t_byte
        self.timeout = timeout

    async def _async_world(self) -> CommWorld:
        if self.backend == BACKEND_SOCKET:
            return await CommWorld.async_socket(
                self.size, self.t_initial, self.t_byte, self.timeout
            )
        return CommWorld.simulated(self.size, self.t_initial, self.t_byte, self.timeout)

    async def async_run(self) -> SolverResult:
        """Run all workers to termination.

        Raises:
            DplbfgsError: The failure of the lowest-ranked failing worker
        """
        shards = partition_instances(self.dataset, self.size)
        partition = partition_features(self.dataset.d, self.size)
        worker_cls = WORKER_CLASSES[self.method]
        LOGGER.info(
            "Running %s on %s with K=%d (%s, %s mode)",
            self.method,
            self.dataset.name,
            self.size,
            self.backend,
            self.config.mode,
        )
        world = await self._async_world()
        try:
            workers = [
                worker_cls(world.worker(rank), shards[rank], partition, self.config)
                for rank in range(self.size)
            ]
            tasks = [asyncio.create_task(worker.async_run()) for worker in workers]
            return await self._async_collect(tasks)
        finally:
            await world.async_close()

    async def _async_collect(self, tasks: list[asyncio.Task[SolverResult]]) -> SolverResult:
        done, pending = await asyncio.wait(tasks, return_when=asyncio.FIRST_EXCEPTION)
        if pending and any(task.exception() is not None for task in done):
            # symmetric failures reach every worker in the same step
            _, pending = await asyncio.wait(pending, timeout=FAILURE_GRACE_SECONDS)
            for task in pending:
                task.cancel()
            await asyncio.gather(*pending, return_exceptions=True)
        for task in tasks:
            if task.cancelled():
                continue
            if (error := task.exception()) is not None:
                LOGGER.error("Worker failed: %s", error)
                raise error
        return tasks[0].result()


async def async_solve(
    dataset: LabeledDataset,
    config: SolverConfig | None = None,
    **kwargs,
) -> SolverResult:
    """Solve with K workers; keyword arguments go to SolveCoordinator."""
    coordinator = SolveCoordinator(dataset, config or SolverConfig(), **kwargs)
    return await coordinator.async_run()


def solve(
    dataset: LabeledDataset,
    config: SolverConfig | None = None,
    **kwargs,
) -> SolverResult:
    """Blocking wrapper around async_solve."""
    return asyncio.run(async_solve(dataset, config, **kwargs))
