"""Collective communication over K logical workers with cost accounting."""

from __future__ import annotations

import asyncio
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .const import BYTES_PER_VALUE, DEFAULT_COMM_TIMEOUT, LOGGER
from .errors import CommProtocolError, CommTimeoutError
from .transport import SocketWorldBackends, async_start_socket_backends
from .utils import log2_workers


@dataclass
class LabelCount:
    """Rounds and bytes charged to one collective label."""

    rounds: int = 0
    bytes: int = 0


@dataclass
class CostLedger:
    """Round/byte counters and the latency-bandwidth cost model of one worker.

    Bytes count one worker's send size per round.
    """

    size: int
    t_initial: float
    t_byte: float
    rounds: int = 0
    bytes: int = 0
    by_label: dict[str, LabelCount] = field(default_factory=dict)

    def charge(self, payload_bytes: int, label: str = "") -> None:
        """Record one round carrying ``payload_bytes``."""
        self.rounds += 1
        self.bytes += payload_bytes
        count = self.by_label.setdefault(label, LabelCount())
        count.rounds += 1
        count.bytes += payload_bytes

    @property
    def modeled_time(self) -> float:
        """Return the modeled communication time in seconds."""
        return modeled_time(self)

    def rounds_for(self, label: str) -> int:
        """Return the rounds charged to ``label``."""
        return self.by_label.get(label, LabelCount()).rounds

    def bytes_for(self, label: str) -> int:
        """Return the bytes charged to ``label``."""
        return self.by_label.get(label, LabelCount()).bytes


def modeled_time(ledger: CostLedger) -> float:
    """Return rounds * log2(K) * T_initial + bytes * T_byte.

    Every round pays the same latency term, so the sum over rounds collapses
    to one product.
    """
    return (
        ledger.rounds * log2_workers(ledger.size) * ledger.t_initial
        + ledger.bytes * ledger.t_byte
    )


class CommBackend(Protocol):
    """Transport that sums one vector per rank and returns the total to all."""

    size: int

    async def async_allreduce(
        self, rank: int, vector: np.ndarray, label: str
    ) -> np.ndarray:
        """Contribute ``vector`` for ``rank`` and wait for the sum."""

    async def async_close(self) -> None:
        """Release transport resources."""


@dataclass
class _Outcome:
    result: np.ndarray | None
    error: str | None
    readers: int


class SimulatedBackend:
    """In-process rendezvous for K cooperating coroutines.

    Each generation collects one contribution per rank, sums them in
    ascending rank order and releases every participant with its own copy.
    """

    def __init__(self, size: int, timeout: float = DEFAULT_COMM_TIMEOUT) -> None:
        """Initialize the simulator.

        Args:
            size: Number of participants K
            timeout: Seconds a participant waits for the others
        """
        self.size = size
        self._timeout = timeout
        self._condition = asyncio.Condition()
        self._generation = 0
        self._slots: list[np.ndarray | None] = [None] * size
        self._labels: list[str | None] = [None] * size
        self._arrived = 0
        self._outcomes: dict[int, _Outcome] = {}

    def _complete(self) -> None:
        """Reduce the current generation and open the next one."""
        lengths = {slot.size for slot in self._slots if slot is not None}
        labels = set(self._labels)
        error: str | None = None
        result: np.ndarray | None = None
        if len(lengths) != 1:
            error = f"payload lengths differ across workers: {sorted(lengths)}"
        elif len(labels) != 1:
            error = f"collective labels differ across workers: {sorted(map(str, labels))}"
        else:
            result = self._slots[0].copy()
            for slot in self._slots[1:]:
                result += slot
        self._outcomes[self._generation] = _Outcome(result, error, self.size)
        self._slots = [None] * self.size
        self._labels = [None] * self.size
        self._arrived = 0
        self._generation += 1
        self._condition.notify_all()

    def _collect(self, generation: int, label: str) -> np.ndarray:
        outcome = self._outcomes[generation]
        outcome.readers -= 1
        if outcome.readers == 0:
            del self._outcomes[generation]
        if outcome.error is not None:
            raise CommProtocolError(outcome.error, label)
        return outcome.result.copy()

    async def async_allreduce(
        self, rank: int, vector: np.ndarray, label: str
    ) -> np.ndarray:
        """Contribute ``vector`` for ``rank`` and wait for the sum.

        Raises:
            CommProtocolError: If lengths or labels differ or a rank calls twice
            CommTimeoutError: If the other participants do not arrive in time
        """
        async with self._condition:
            if self._slots[rank] is not None:
                raise CommProtocolError(
                    f"rank {rank} entered collective {label!r} twice", label
                )
            generation = self._generation
            self._slots[rank] = vector
            self._labels[rank] = label
            self._arrived += 1
            if self._arrived == self.size:
                self._complete()
            else:
                try:
                    await asyncio.wait_for(
                        self._condition.wait_for(
                            lambda: self._generation != generation
                        ),
                        self._timeout,
                    )
                except asyncio.TimeoutError as err:
                    LOGGER.error(
                        "Rank %d timed out in collective %s after %.1f s",
                        rank,
                        label,
                        self._timeout,
                    )
                    raise CommTimeoutError(
                        f"collective {label!r} not completed within {self._timeout} s",
                        label,
                        self._timeout,
                    ) from err
            return self._collect(generation, label)

    async def async_close(self) -> None:
        """Nothing to release for the simulator."""


class WorkerComm:
    """One participant's view of the world: rank, backend and own ledger."""

    def __init__(self, rank: int, backend: CommBackend, ledger: CostLedger) -> None:
        """Initialize the worker handle.

        Args:
            rank: Worker id in [0, K)
            backend: Shared transport
            ledger: This worker's cost ledger
        """
        self.rank = rank
        self._backend = backend
        self.ledger = ledger

    @property
    def size(self) -> int:
        """Return K."""
        return self._backend.size

    async def async_allreduce_sum(
        self, local: np.ndarray | Sequence[float], label: str = "allreduce"
    ) -> np.ndarray:
        """Sum ``local`` elementwise across all workers.

        With K = 1 the local vector is returned and nothing is recorded.
        """
        vector = np.array(local, dtype=np.float64).ravel()
        if self.size == 1:
            return vector
        result = await self._backend.async_allreduce(self.rank, vector, label)
        self.ledger.charge(BYTES_PER_VALUE * vector.size, label)
        return result

    async def async_allreduce_scalar(self, value: float, label: str = "scalar") -> float:
        """Sum one scalar across all workers."""
        result = await self.async_allreduce_sum([value], label)
        return float(result[0])


class CommWorld:
    """K-participant collective-communication handle."""

    def __init__(
        self,
        backends: list[CommBackend],
        t_initial: float,
        t_byte: float,
    ) -> None:
        """Initialize the world.

        Args:
            backends: Transport used by each rank (the simulator is shared)
            t_initial: Seconds per connection
            t_byte: Seconds per byte
        """
        self._backends = backends
        self.t_initial = t_initial
        self.t_byte = t_byte
        self._socket: SocketWorldBackends | None = None

    @property
    def size(self) -> int:
        """Return K."""
        return len(self._backends)

    @classmethod
    def simulated(
        cls,
        size: int,
        t_initial: float,
        t_byte: float,
        timeout: float = DEFAULT_COMM_TIMEOUT,
    ) -> CommWorld:
        """Create an in-process world of ``size`` workers."""
        backend = SimulatedBackend(size, timeout)
        return cls([backend] * size, t_initial, t_byte)

    @classmethod
    async def async_socket(
        cls,
        size: int,
        t_initial: float,
        t_byte: float,
        timeout: float = DEFAULT_COMM_TIMEOUT,
    ) -> CommWorld:
        """Create a world whose ranks talk to a local socket hub."""
        backends = await async_start_socket_backends(size, timeout)
        world = cls(list(backends.clients), t_initial, t_byte)
        world._socket = backends
        return world

    def worker(self, rank: int) -> WorkerComm:
        """Return the handle of ``rank`` with a fresh ledger."""
        return WorkerComm(
            rank,
            self._backends[rank],
            CostLedger(self.size, self.t_initial, self.t_byte),
        )

    async def async_close(self) -> None:
        """Close every distinct backend."""
        if self._socket is not None:
            await self._socket.async_close()
            self._socket = None
            return
        for backend in {id(b): b for b in self._backends}.values():
            await backend.async_close()


class Reducer(Protocol):
    """Sums a vector of partial results across the participants that hold it."""

    async def async_sum(self, local: np.ndarray) -> np.ndarray:
        """Return the reduced vector."""


class WorldReducer:
    """Reducer that sums through the world under a fixed label."""

    def __init__(self, comm: WorkerComm, label: str) -> None:
        self._comm = comm
        self.label = label

    async def async_sum(self, local: np.ndarray) -> np.ndarray:
        """Return the allreduced vector."""
        return await self._comm.async_allreduce_sum(local, self.label)


class LocalReducer:
    """Reducer for replicated data: the local value already is the total."""

    async def async_sum(self, local: np.ndarray) -> np.ndarray:
        """Return a copy of ``local``."""
        return np.array(local, dtype=np.float64).ravel()
