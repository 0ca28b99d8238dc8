"""Per-rank dataflow instances and their thread triads.

Each vertex owns ``indegree * world_size`` incoming endpoints (one listener and
one processor thread each) and ``outdegree * world_size`` outgoing endpoints
(one sender thread each). Sources additionally run one ingestion thread.
Pipelined edges between vertices of the same rank skip the sender, the
transport and the receiving listener.

Termination: sources send TERMINATE on every outgoing endpoint once done. A
vertex forwards TERMINATE only after it arrived on all incoming endpoints, so
no DATA can trail it on any channel.
"""
from __future__ import annotations

import collections
import logging
import threading
import time
from dataclasses import dataclass, field

from ..core import ChannelTag, Message, MessageKind
from ..ops.base import Clock, OpContext, Operator, make_operator
from ..ops.stateful import DuplicateMarker, WatermarkTracker
from ..queues import BoundedQueue, QueueClosed
from ..transport import TransportClosed, TransportError
from .topology import Topology, TopologyError

log = logging.getLogger(__name__)


class StartupError(RuntimeError):
    pass


@dataclass
class InEndpoint:
    index: int
    tag: ChannelTag
    queue: BoundedQueue
    remote: bool = True  # False when fed by a same-rank pipelined predecessor


@dataclass
class OutEndpoint:
    slot: int
    tag: ChannelTag
    queue: BoundedQueue | None = None
    direct: BoundedQueue | None = None  # pipelined: successor's incoming queue

    def put(self, msg: Message) -> None:
        (self.direct if self.direct is not None else self.queue).put(msg)


@dataclass
class VertexMetrics:
    events_in: int = 0
    events_out: int = 0
    messages_in: int = 0
    markers_in: int = 0
    markers_out: int = 0
    errors: int = 0
    protocol_errors: int = 0
    unreleased_windows: int = 0
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "extra"}
        d.update(self.extra)
        return d


class Vertex:
    def __init__(self, op: Operator, rank: int, world_size: int, transport, queue_capacity: int):
        self.op = op
        self.desc = op.desc
        self.rank = rank
        self.world_size = world_size
        self.transport = transport
        self.capacity = queue_capacity
        d = self.desc
        self.in_endpoints = [
            InEndpoint(i * world_size + r, ChannelTag(r, p, rank, d.op_id), BoundedQueue(queue_capacity))
            for i, p in enumerate(d.predecessors)
            for r in range(world_size)
        ]
        self.out_endpoints = [
            OutEndpoint(i * world_size + r, ChannelTag(rank, d.op_id, r, s), BoundedQueue(queue_capacity))
            for i, s in enumerate(d.successors)
            for r in range(world_size)
        ]
        self.tracker = WatermarkTracker(len(self.in_endpoints))
        self.lock = threading.Lock()
        self._terminated = 0
        self._metric_lock = threading.Lock()
        self.metrics = VertexMetrics()
        self.threads: list[threading.Thread] = []
        self.done = threading.Event()

    @property
    def is_source(self) -> bool:
        return not self.in_endpoints

    def in_endpoint_from(self, pred_op: int, pred_rank: int) -> InEndpoint:
        pos = self.desc.predecessors.index(pred_op)
        return self.in_endpoints[pos * self.world_size + pred_rank]

    def _bump(self, **kw) -> None:
        with self._metric_lock:
            for k, v in kw.items():
                setattr(self.metrics, k, getattr(self.metrics, k) + v)

    # ----- outgoing helpers

    def _push_slots(self, slots: dict) -> None:
        n = 0
        outs = self.out_endpoints
        for slot, events in slots.items():
            if events:
                ep = outs[slot]
                ep.put(Message.data(ep.tag, events))
                n += len(events)
        if n:
            self._bump(events_out=n)

    def _broadcast_markers(self, windows) -> None:
        for w in windows:
            for ep in self.out_endpoints:
                ep.put(Message.marker(ep.tag, w))
        if windows and self.out_endpoints:
            self._bump(markers_out=len(windows) * len(self.out_endpoints))

    def _broadcast_terminate(self) -> None:
        for ep in self.out_endpoints:
            ep.put(Message.terminate(ep.tag))

    # ----- thread bodies

    def listening_loop(self, ep: InEndpoint) -> None:
        while True:
            try:
                msg = self.transport.recv(ep.tag)
            except TransportClosed:
                log.info("rank %d op %d: transport closed under listener %s", self.rank, self.desc.op_id, ep.tag)
                return
            except TransportError as exc:
                log.error("rank %d op %d: listener error: %s", self.rank, self.desc.op_id, exc)
                return
            try:
                ep.queue.put(msg)
            except QueueClosed:
                return
            if msg.kind is MessageKind.TERMINATE:
                return

    def processing_loop(self, ep: InEndpoint) -> None:
        while True:
            try:
                msg = ep.queue.get()
            except QueueClosed:
                return
            try:
                if self.handle(ep.index, msg):
                    return
            except QueueClosed:
                return

    def sending_loop(self, ep: OutEndpoint) -> None:
        tag = ep.tag
        while True:
            try:
                msg = ep.queue.get()
            except QueueClosed:
                return
            try:
                self.transport.send(tag.target_rank, tag, msg)
            except TransportError as exc:
                log.error("rank %d op %d: send on %s failed: %s", self.rank, self.desc.op_id, tag, exc)
                return
            if msg.kind is MessageKind.TERMINATE:
                return

    def ingestion_loop(self) -> None:
        op = self.op
        try:
            for kind, item in op.batches():
                if kind == "data":
                    self._bump(events_in=len(item))
                    self._push_slots(op.process(item, -1))
                else:
                    self._broadcast_markers([item])
        except QueueClosed:
            return
        except Exception:
            log.exception("rank %d op %d: generator failed", self.rank, self.desc.op_id)
            self._bump(errors=1)
        try:
            self._broadcast_terminate()
        except QueueClosed:
            pass
        self.done.set()

    # ----- message handling

    def handle(self, index: int, msg: Message) -> bool:
        """Process one incoming message; True once this thread should exit."""
        kind = msg.kind
        op = self.op
        if kind is MessageKind.DATA:
            events = msg.events
            self._bump(events_in=len(events), messages_in=1)
            try:
                if op.stateful:
                    with self.lock:
                        slots = op.process(events, index)
                else:
                    slots = op.process(events, index)
            except Exception:
                log.exception("rank %d op %d: process failed", self.rank, self.desc.op_id)
                self._bump(errors=1)
                return False
            self._push_slots(slots)
            return False
        if kind is MessageKind.WINDOW_MARKER:
            self._bump(markers_in=1)
            with self.lock:
                try:
                    done = self.tracker.observe(index, msg.window_id)
                except DuplicateMarker as exc:
                    log.warning("rank %d op %d: %s", self.rank, self.desc.op_id, exc)
                    self._bump(protocol_errors=1)
                    return False
                if done:
                    self._complete(done)
            return False
        with self.lock:
            self._terminated += 1
            if self._terminated == len(self.in_endpoints):
                self._finish()
        return True

    def _complete(self, windows: list[int]) -> None:
        if self.op.stateful:
            try:
                self._push_slots(self.op.release(windows[-1]))
            except QueueClosed:
                raise
            except Exception:
                log.exception("rank %d op %d: release failed", self.rank, self.desc.op_id)
                self._bump(errors=1)
        self._broadcast_markers(windows)

    def _finish(self) -> None:
        # No input remains anywhere upstream, so every open window is complete.
        marks = [m for m in self.tracker.marks if m is not None]
        final = max(marks) if marks else None
        open_ws = self._open_window_ids() if self.op.stateful else []
        if open_ws:
            final = max(final if final is not None else open_ws[-1], open_ws[-1])
        if final is not None:
            low = self.tracker.low
            if low is None:
                done = list(range(min([final, *open_ws]), final + 1))
            else:
                done = list(range(low + 1, final + 1))
            if done:
                self.tracker.low = final
                self._complete(done)
        self.metrics.unreleased_windows = self.op.open_windows()
        self._broadcast_terminate()
        self.done.set()

    def _open_window_ids(self) -> list[int]:
        op = self.op
        ids: set[int] = set()
        if hasattr(op, "store"):
            ids |= op.store.windows.keys()
        if hasattr(op, "sides"):
            for s in op.sides:
                ids |= s.windows.keys()
        return sorted(ids)

    def collect_metrics(self) -> dict:
        d = self.metrics.as_dict()
        d.update(self.op.counters)
        return d

    def queues(self) -> list[BoundedQueue]:
        qs = [ep.queue for ep in self.in_endpoints]
        qs += [ep.queue for ep in self.out_endpoints if ep.queue is not None]
        return qs


class DataflowInstance:
    """All vertices of one rank, wired but not yet running."""

    def __init__(self, topology: Topology, world_size: int, rank: int, transport, clock: Clock, vertices: dict):
        self.topology = topology
        self.world_size = world_size
        self.rank = rank
        self.transport = transport
        self.clock = clock
        self.vertices: dict[int, Vertex] = vertices

    def thread_plan(self) -> dict[int, collections.Counter]:
        plan = {}
        for op_id, v in self.vertices.items():
            c = collections.Counter()
            c["listener"] = sum(1 for ep in v.in_endpoints if ep.remote)
            c["processor"] = len(v.in_endpoints)
            c["sender"] = sum(1 for ep in v.out_endpoints if ep.direct is None)
            c["ingestion"] = 1 if v.is_source else 0
            plan[op_id] = c
        return plan

    def operator(self, op_id: int) -> Operator:
        return self.vertices[op_id].op


def build_dataflow(
    topology: Topology,
    world_size: int,
    rank: int,
    transport,
    clock: Clock | None = None,
    queue_capacity: int = 1024,
) -> DataflowInstance:
    if not 0 <= rank < world_size:
        raise TopologyError(f"rank {rank} outside world of {world_size}")
    if world_size > 256:
        raise TopologyError("world_size exceeds the 8-bit rank field")
    clock = clock or Clock()
    ctx_base = dict(rank=rank, world_size=world_size, topology=topology, clock=clock)
    vertices = {}
    for op_id in topology.order:
        desc = topology[op_id]
        op = make_operator(desc, OpContext(**ctx_base))
        vertices[op_id] = Vertex(op, rank, world_size, transport, queue_capacity)
    for v in vertices.values():
        if not v.desc.pipelined:
            continue
        for i, s in enumerate(v.desc.successors):
            out = v.out_endpoints[i * world_size + rank]
            target = vertices[s].in_endpoint_from(v.desc.op_id, rank)
            out.direct = target.queue
            out.queue = None
            target.remote = False
    return DataflowInstance(topology, world_size, rank, transport, clock, vertices)


class RunHandle:
    def __init__(self, instances: list[DataflowInstance], threads: list[threading.Thread]):
        self.instances = instances
        self.threads = threads
        self._joined = False

    def join(self, timeout: float | None = None) -> None:
        if self._joined:
            return
        deadline = None if timeout is None else time.monotonic() + timeout
        for t in self.threads:
            remaining = None if deadline is None else max(0.0, deadline - time.monotonic())
            t.join(remaining)
            if t.is_alive():
                raise TimeoutError(f"thread {t.name} still running")
        self._joined = True

    @property
    def finished(self) -> bool:
        return all(not t.is_alive() for t in self.threads)

    def alive_threads(self) -> list[str]:
        return [t.name for t in self.threads if t.is_alive()]

    def abort(self) -> None:
        for inst in self.instances:
            for v in inst.vertices.values():
                for q in v.queues():
                    q.close()
            try:
                inst.transport.shutdown()
            except Exception:
                pass


def _spawn(name: str, target, args, threads: list) -> None:
    t = threading.Thread(target=target, args=args, name=name, daemon=True)
    t.start()
    threads.append(t)


def stream_process(*instances: DataflowInstance) -> RunHandle:
    """Start every vertex's threads for the given instances."""
    threads: list[threading.Thread] = []
    try:
        for inst in instances:
            for op_id, v in inst.vertices.items():
                tag = f"r{inst.rank}-op{op_id}"
                for ep in v.in_endpoints:
                    if ep.remote:
                        _spawn(f"{tag}-listen-{ep.index}", v.listening_loop, (ep,), v.threads)
                    _spawn(f"{tag}-proc-{ep.index}", v.processing_loop, (ep,), v.threads)
                for ep in v.out_endpoints:
                    if ep.direct is None:
                        _spawn(f"{tag}-send-{ep.slot}", v.sending_loop, (ep,), v.threads)
                threads.extend(v.threads)
        for inst in instances:
            for op_id, v in inst.vertices.items():
                if v.is_source:
                    _spawn(f"r{inst.rank}-op{op_id}-ingest", v.ingestion_loop, (), v.threads)
                    threads.append(v.threads[-1])
    except RuntimeError as exc:
        handle = RunHandle(list(instances), threads)
        handle.abort()
        for t in threads:
            t.join(1.0)
        raise StartupError(f"could not start threads: {exc}") from exc
    return RunHandle(list(instances), threads)
