"""Socket backend: a hub that sums length-prefixed float64 frames from K clients."""

from __future__ import annotations

import asyncio
import struct

import numpy as np

from .const import DEFAULT_COMM_TIMEOUT, LOGGER
from .errors import CommError, CommProtocolError, CommTimeoutError

FRAME_MAGIC = b"DPLB"
FRAME_HEADER = struct.Struct("<4sQII")
ERROR_LENGTH = 0xFFFFFFFF
WIRE_DTYPE = np.dtype("<f8")

MAX_CONNECT_RETRIES = 2
CONNECT_RETRY_DELAYS = [0.1, 0.5]  # seconds between retries


def encode_frame(rendezvous: int, rank: int, vector: np.ndarray) -> bytes:
    """Return header plus little-endian float64 payload."""
    payload = np.asarray(vector, dtype=WIRE_DTYPE).tobytes()
    return FRAME_HEADER.pack(FRAME_MAGIC, rendezvous, rank, vector.size) + payload


def encode_error(rendezvous: int, rank: int) -> bytes:
    """Return an error frame (length field 0xFFFFFFFF, no payload)."""
    return FRAME_HEADER.pack(FRAME_MAGIC, rendezvous, rank, ERROR_LENGTH)


async def read_frame(reader: asyncio.StreamReader) -> tuple[int, int, np.ndarray | None]:
    """Read one frame.

    Returns:
        (rendezvous id, rank, payload) with payload None for an error frame

    Raises:
        CommProtocolError: On a bad magic value
        asyncio.IncompleteReadError: If the peer closed mid-frame
    """
    header = await reader.readexactly(FRAME_HEADER.size)
    magic, rendezvous, rank, length = FRAME_HEADER.unpack(header)
    if magic != FRAME_MAGIC:
        raise CommProtocolError(f"bad frame magic {magic!r}")
    if length == ERROR_LENGTH:
        return rendezvous, rank, None
    payload = await reader.readexactly(length * WIRE_DTYPE.itemsize)
    return rendezvous, rank, np.frombuffer(payload, dtype=WIRE_DTYPE).astype(np.float64)


class SocketHub:
    """Rendezvous server: waits for one frame per rank, replies with the sum."""

    def __init__(self, size: int, host: str = "127.0.0.1", port: int = 0) -> None:
        """Initialize the hub.

        Args:
            size: Number of clients K
            host: Interface to bind
            port: Port to bind, 0 picks a free one
        """
        self.size = size
        self.host = host
        self.port = port
        self._server: asyncio.Server | None = None
        self._writers: dict[int, asyncio.StreamWriter] = {}
        self._pending: dict[int, dict[int, np.ndarray]] = {}

    async def async_start(self) -> None:
        """Start listening."""
        self._server = await asyncio.start_server(
            self._handle_client, self.host, self.port
        )
        self.port = self._server.sockets[0].getsockname()[1]
        LOGGER.debug("Socket hub listening on %s:%d", self.host, self.port)

    async def async_stop(self) -> None:
        """Close every connection and stop listening."""
        for writer in self._writers.values():
            writer.close()
        self._writers.clear()
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
            self._server = None

    async def _handle_client(
        self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter
    ) -> None:
        try:
            while True:
                rendezvous, rank, vector = await read_frame(reader)
                self._writers[rank] = writer
                if vector is None:
                    continue
                contributions = self._pending.setdefault(rendezvous, {})
                contributions[rank] = vector
                if len(contributions) == self.size:
                    del self._pending[rendezvous]
                    await self._reply(rendezvous, contributions)
        except (asyncio.IncompleteReadError, ConnectionError):
            LOGGER.debug("Socket hub client disconnected")
        except CommProtocolError as err:
            LOGGER.error("Socket hub dropped a client: %s", err)
            writer.close()

    async def _reply(self, rendezvous: int, contributions: dict[int, np.ndarray]) -> None:
        lengths = {v.size for v in contributions.values()}
        if len(lengths) != 1:
            LOGGER.error(
                "Rendezvous %d: payload lengths differ %s", rendezvous, sorted(lengths)
            )
            frames = {rank: encode_error(rendezvous, rank) for rank in contributions}
        else:
            total = contributions[0].copy()
            for rank in range(1, self.size):
                total += contributions[rank]
            frames = {
                rank: encode_frame(rendezvous, rank, total) for rank in contributions
            }
        for rank, frame in frames.items():
            writer = self._writers[rank]
            writer.write(frame)
            await writer.drain()


class SocketBackend:
    """One rank's connection to a SocketHub."""

    def __init__(
        self,
        rank: int,
        size: int,
        host: str,
        port: int,
        timeout: float = DEFAULT_COMM_TIMEOUT,
    ) -> None:
        """Initialize the client.

        Args:
            rank: Worker id
            size: Number of workers K
            host: Hub host
            port: Hub port
            timeout: Seconds to wait for a reply
        """
        self.rank = rank
        self.size = size
        self._host = host
        self._port = port
        self._timeout = timeout
        self._rendezvous = 0
        self._reader: asyncio.StreamReader | None = None
        self._writer: asyncio.StreamWriter | None = None

    async def async_connect(self) -> None:
        """Connect to the hub, retrying network errors.

        Raises:
            CommError: If every attempt fails
        """
        for attempt in range(MAX_CONNECT_RETRIES + 1):
            try:
                self._reader, self._writer = await asyncio.wait_for(
                    asyncio.open_connection(self._host, self._port), self._timeout
                )
                return
            except (OSError, asyncio.TimeoutError) as err:
                if attempt < MAX_CONNECT_RETRIES:
                    delay = CONNECT_RETRY_DELAYS[attempt]
                    LOGGER.warning(
                        "Rank %d connect failed (attempt %d/%d), retrying in %.1fs: %s",
                        self.rank,
                        attempt + 1,
                        MAX_CONNECT_RETRIES + 1,
                        delay,
                        err,
                    )
                    await asyncio.sleep(delay)
                    continue
                LOGGER.error("Rank %d could not reach the hub: %s", self.rank, err)
                raise CommError(f"cannot connect to hub: {err}") from err

    async def async_allreduce(
        self, rank: int, vector: np.ndarray, label: str
    ) -> np.ndarray:
        """Send ``vector`` to the hub and wait for the sum.

        Raises:
            CommProtocolError: On an error frame or a mismatched reply
            CommTimeoutError: If no reply arrives in time
            CommError: If the hub closed the connection
        """
        if self._writer is None or self._reader is None:
            raise CommError("socket backend is not connected", label)
        rendezvous = self._rendezvous
        self._rendezvous += 1
        self._writer.write(encode_frame(rendezvous, rank, vector))
        try:
            await self._writer.drain()
            reply_id, _, total = await asyncio.wait_for(
                read_frame(self._reader), self._timeout
            )
        except asyncio.TimeoutError as err:
            LOGGER.error("Rank %d timed out in collective %s", rank, label)
            raise CommTimeoutError(
                f"no reply to collective {label!r} within {self._timeout} s",
                label,
                self._timeout,
            ) from err
        except (asyncio.IncompleteReadError, ConnectionError) as err:
            raise CommError(f"hub closed the connection during {label!r}", label) from err
        if total is None:
            raise CommProtocolError(f"hub rejected collective {label!r}", label)
        if reply_id != rendezvous:
            raise CommProtocolError(
                f"reply for rendezvous {reply_id}, expected {rendezvous}", label
            )
        return total

    async def async_close(self) -> None:
        """Close the connection."""
        if self._writer is not None:
            self._writer.close()
            try:
                await self._writer.wait_closed()
            except ConnectionError:
                pass
            self._writer = None
            self._reader = None


class SocketWorldBackends:
    """Hub plus K connected clients; closing stops both."""

    def __init__(self, hub: SocketHub, clients: list[SocketBackend]) -> None:
        self.hub = hub
        self.clients = clients

    async def async_close(self) -> None:
        """Close the clients, then the hub."""
        for client in self.clients:
            await client.async_close()
        await self.hub.async_stop()


async def async_start_socket_backends(
    size: int, timeout: float = DEFAULT_COMM_TIMEOUT, host: str = "127.0.0.1"
) -> SocketWorldBackends:
    """Start a hub on a free port and connect ``size`` clients to it."""
    hub = SocketHub(size, host)
    await hub.async_start()
    clients = [SocketBackend(rank, size, host, hub.port, timeout) for rank in range(size)]
    try:
        for client in clients:
            await client.async_connect()
    except CommError:
        await SocketWorldBackends(hub, clients).async_close()
        raise
    return SocketWorldBackends(hub, clients)
