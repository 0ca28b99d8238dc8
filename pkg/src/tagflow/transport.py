"""Blocking, tag-matched point-to-point delivery between ranks.

Two backends share one surface (``send``/``recv``/``shutdown``):

* :class:`InProcessHub` hands out one :class:`InProcessTransport` per rank when
  ranks are threads of a single process.
* :class:`SocketTransport` connects ranks running as separate processes (or
  threads) over TCP, one stream per ordered rank pair.
"""
from __future__ import annotations

import collections
import enum
import logging
import socket
import struct
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from .core import ChannelTag, ConfigError, Message, deserialize_message, encode_tag, serialize_message
from .queues import BoundedQueue, QueueClosed

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 0x01
MAX_FRAME = 64 * 1024 * 1024
_LEN = struct.Struct("<I")


class TransportError(RuntimeError):
    pass


class TransportClosed(TransportError):
    pass


class Backend(str, enum.Enum):
    IN_PROCESS = "in_process"
    SOCKET = "socket"


@dataclass(frozen=True)
class RankAddress:
    rank: int
    endpoint: str

    @property
    def host_port(self) -> tuple[str, int]:
        host, _, port = self.endpoint.rpartition(":")
        return host or "127.0.0.1", int(port)


@dataclass
class TransportConfig:
    world_size: int = 1
    backend: Backend = Backend.IN_PROCESS
    addresses: list[RankAddress] = field(default_factory=list)
    connect_timeout_ms: int = 10_000
    send_queue_capacity: int = 1024
    serialize: bool = False  # in-process only: push frames through the codec

    def __post_init__(self):
        self.backend = Backend(self.backend)
        if not 1 <= self.world_size <= 256:
            raise ConfigError("world_size must be in [1, 256]")
        if self.backend is Backend.SOCKET:
            if len(self.addresses) != self.world_size:
                raise ConfigError(
                    f"socket backend needs {self.world_size} addresses, got {len(self.addresses)}"
                )
            if sorted(a.rank for a in self.addresses) != list(range(self.world_size)):
                raise ConfigError("addresses must cover ranks 0..world_size-1 exactly once")


def read_peers_file(path: str | Path) -> list[RankAddress]:
    """Parse ``rank host:port`` lines; blank lines and ``#`` comments are skipped."""
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            rank, endpoint = line.split()
            addr = RankAddress(int(rank), endpoint)
            addr.host_port
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: expected 'rank host:port', got {line!r}") from None
        if any(a.rank == addr.rank for a in out):
            raise ConfigError(f"{path}:{lineno}: rank {addr.rank} listed twice")
        out.append(addr)
    return sorted(out, key=lambda a: a.rank)


class _TagQueues:
    """Per-tag receive queues with the single-receiver rule."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._queues: dict[int, BoundedQueue[Message]] = {}
        self._receivers: dict[int, int] = {}
        self._lock = threading.Lock()
        self.closed = False

    def get(self, tag: int) -> BoundedQueue[Message]:
        q = self._queues.get(tag)
        if q is None:
            with self._lock:
                q = self._queues.get(tag)
                if q is None:
                    q = BoundedQueue(self.capacity)
                    if self.closed:
                        q.close()
                    self._queues[tag] = q
        return q

    def claim(self, tag: int) -> None:
        me = threading.get_ident()
        owner = self._receivers.setdefault(tag, me)
        if owner != me:
            raise TransportError(f"tag {tag:#010x} already has a receiver thread")

    def close(self) -> None:
        with self._lock:
            self.closed = True
            queues = list(self._queues.values())
        for q in queues:
            q.close()

    def pending(self) -> dict[int, int]:
        with self._lock:
            return {t: len(q) for t, q in self._queues.items() if len(q)}


class _Stats:
    def __init__(self):
        self._lock = threading.Lock()
        self.sent_by_op: collections.Counter[tuple[int, str]] = collections.Counter()
        self.sent = 0
        self.received = 0

    def count_send(self, tag: ChannelTag, msg: Message) -> None:
        with self._lock:
            self.sent += 1
            self.sent_by_op[(tag.source_op, msg.kind.name)] += 1

    def data_sends(self, source_op: int) -> int:
        return self.sent_by_op[(source_op, "DATA")]


class InProcessHub:
    """Shared mailboxes for ranks living in one process."""

    def __init__(self, config: TransportConfig | None = None):
        self.config = config or TransportConfig()
        self._mailboxes = [_TagQueues(self.config.send_queue_capacity) for _ in range(self.config.world_size)]
        self._transports = [InProcessTransport(self, r) for r in range(self.config.world_size)]

    @property
    def world_size(self) -> int:
        return self.config.world_size

    def transport(self, rank: int) -> "InProcessTransport":
        return self._transports[rank]

    def shutdown(self) -> None:
        for mb in self._mailboxes:
            mb.close()


class InProcessTransport:
    def __init__(self, hub: InProcessHub, rank: int):
        self.hub = hub
        self.rank = rank
        self.world_size = hub.world_size
        self.stats = _Stats()

    def send(self, dest: int, tag: ChannelTag, msg: Message) -> None:
        if not 0 <= dest < self.world_size:
            raise TransportError(f"destination rank {dest} outside world of {self.world_size}")
        if tag.target_rank != dest:
            raise TransportError(f"tag targets rank {tag.target_rank}, sent to {dest}")
        if self.hub.config.serialize:
            msg = deserialize_message(serialize_message(msg))
        try:
            self.hub._mailboxes[dest].get(encode_tag(tag)).put(msg)
        except QueueClosed:
            raise TransportClosed("transport shut down") from None
        self.stats.count_send(tag, msg)

    def recv(self, tag: ChannelTag, timeout: float | None = None) -> Message:
        box = self.hub._mailboxes[self.rank]
        t = encode_tag(tag)
        box.claim(t)
        try:
            msg = box.get(t).get(timeout)
        except QueueClosed:
            raise TransportClosed("transport shut down") from None
        self.stats.received += 1
        return msg

    def pending(self) -> dict[int, int]:
        return self.hub._mailboxes[self.rank].pending()

    def shutdown(self) -> None:
        self.hub._mailboxes[self.rank].close()


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return bytes(buf)


class SocketTransport:
    """One rank's TCP endpoint.

    Call :meth:`bind` on every rank before any :meth:`connect`; when ranks are
    separate processes, ``connect`` retries until ``connect_timeout_ms``.
    """

    def __init__(self, config: TransportConfig, rank: int):
        if config.backend is not Backend.SOCKET:
            raise ConfigError("SocketTransport needs a SOCKET config")
        if not 0 <= rank < config.world_size:
            raise ConfigError(f"rank {rank} outside world of {config.world_size}")
        self.config = config
        self.rank = rank
        self.world_size = config.world_size
        self.stats = _Stats()
        self._queues = _TagQueues(config.send_queue_capacity)
        self._listener: socket.socket | None = None
        self._peers: dict[int, socket.socket] = {}
        self._peer_locks = {r: threading.Lock() for r in range(self.world_size)}
        self._inbound: list[socket.socket] = []
        self._threads: list[threading.Thread] = []
        self._closed = threading.Event()
        self.address = {a.rank: a for a in config.addresses}[rank]

    def bind(self) -> RankAddress:
        host, port = self.address.host_port
        s = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        s.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        s.bind((host, port))
        s.listen(self.world_size + 4)
        self._listener = s
        self.address = RankAddress(self.rank, f"{host}:{s.getsockname()[1]}")
        t = threading.Thread(target=self._accept_loop, name=f"accept-r{self.rank}", daemon=True)
        t.start()
        self._threads.append(t)
        return self.address

    def connect(self, addresses: list[RankAddress] | None = None) -> None:
        addresses = addresses or self.config.addresses
        deadline = time.monotonic() + self.config.connect_timeout_ms / 1000
        for addr in addresses:
            while True:
                try:
                    s = socket.create_connection(addr.host_port, timeout=5)
                    break
                except OSError:
                    if time.monotonic() > deadline:
                        raise TransportError(f"rank {addr.rank} at {addr.endpoint} unreachable") from None
                    time.sleep(0.05)
            s.settimeout(None)
            s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            s.sendall(bytes([PROTOCOL_VERSION, self.rank]))
            self._peers[addr.rank] = s

    def start(self) -> None:
        self.bind()
        self.connect()

    def _accept_loop(self) -> None:
        while not self._closed.is_set():
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            hello = _recv_exact(conn, 2)
            if hello is None or hello[0] != PROTOCOL_VERSION:
                log.warning("rank %d: rejected connection with bad handshake %r", self.rank, hello)
                conn.close()
                continue
            self._inbound.append(conn)
            t = threading.Thread(
                target=self._demux, args=(conn, hello[1]), name=f"demux-r{self.rank}<-{hello[1]}", daemon=True
            )
            t.start()
            self._threads.append(t)

    def _demux(self, conn: socket.socket, peer: int) -> None:
        try:
            while True:
                head = _recv_exact(conn, 4)
                if head is None:
                    return
                (n,) = _LEN.unpack(head)
                if n > MAX_FRAME:
                    log.error("rank %d: frame of %d bytes from rank %d exceeds limit", self.rank, n, peer)
                    return
                frame = _recv_exact(conn, n)
                if frame is None:
                    return
                msg = deserialize_message(frame)
                self._queues.get(encode_tag(msg.tag)).put(msg)
        except (OSError, QueueClosed):
            return
        except ValueError as exc:
            log.error("rank %d: garbled frame from rank %d: %s", self.rank, peer, exc)

    def send(self, dest: int, tag: ChannelTag, msg: Message) -> None:
        if tag.target_rank != dest:
            raise TransportError(f"tag targets rank {tag.target_rank}, sent to {dest}")
        if self._closed.is_set():
            raise TransportClosed("transport shut down")
        frame = serialize_message(msg)
        if len(frame) > MAX_FRAME:
            raise TransportError(f"frame of {len(frame)} bytes exceeds {MAX_FRAME}")
        sock = self._peers.get(dest)
        if sock is None:
            raise TransportError(f"no connection to rank {dest}")
        try:
            with self._peer_locks[dest]:
                sock.sendall(_LEN.pack(len(frame)) + frame)
        except OSError as exc:
            raise TransportError(f"send to rank {dest} failed: {exc}") from exc
        self.stats.count_send(tag, msg)

    def recv(self, tag: ChannelTag, timeout: float | None = None) -> Message:
        t = encode_tag(tag)
        self._queues.claim(t)
        try:
            msg = self._queues.get(t).get(timeout)
        except QueueClosed:
            raise TransportClosed("transport shut down") from None
        self.stats.received += 1
        return msg

    def pending(self) -> dict[int, int]:
        return self._queues.pending()

    def shutdown(self) -> None:
        if self._closed.is_set():
            return
        self._closed.set()
        for s in list(self._peers.values()):
            try:
                s.shutdown(socket.SHUT_WR)
            except OSError:
                pass
        self._queues.close()
        for s in list(self._inbound):
            try:
                s.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
        if self._listener is not None:
            try:
                self._listener.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            self._listener.close()
        for t in self._threads:
            if t.name.startswith("demux"):
                t.join(timeout=2)
        for s in list(self._peers.values()) + self._inbound:
            s.close()


def local_socket_cluster(world_size: int, **kwargs) -> list[SocketTransport]:
    """Bind ``world_size`` transports on loopback ephemeral ports and connect them."""
    addrs = [RankAddress(r, "127.0.0.1:0") for r in range(world_size)]
    cfg = TransportConfig(world_size=world_size, backend=Backend.SOCKET, addresses=addrs, **kwargs)
    transports = [SocketTransport(cfg, r) for r in range(world_size)]
    bound = [t.bind() for t in transports]
    for t in transports:
        t.connect(bound)
    return transports
