from __future__ import annotations

import collections
import enum
import struct
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable

from ..core import ConfigError, Event
from ..runtime.topology import OperatorDescriptor, Topology

_RELEASE = struct.Struct("<Q")


class Clock:
    """Milliseconds since ``epoch_ms`` (unix ms), advanced by the monotonic clock."""

    def __init__(self, epoch_ms: int | None = None):
        self._wall0 = time.time_ns()
        self._mono0 = time.monotonic_ns()
        self.epoch_ms = self._wall0 // 1_000_000 if epoch_ms is None else epoch_ms

    def now_ms(self) -> int:
        return (self._wall0 + time.monotonic_ns() - self._mono0) // 1_000_000 - self.epoch_ms


def stamp_release(ms: int) -> bytes:
    return _RELEASE.pack(ms)


def read_release(payload: bytes) -> int | None:
    return _RELEASE.unpack(payload)[0] if len(payload) == _RELEASE.size else None


class RoutingStrategy(str, enum.Enum):
    SHARD_BY_VALUE = "value"
    SHARD_BY_KEY = "key"
    SHARD_BY_WINDOW = "window"
    SPLIT_BY_CONDITION = "split"
    LOCAL_ONLY = "local"
    GATHER = "gather"


@dataclass
class OpContext:
    rank: int = 0
    world_size: int = 1
    topology: Topology | None = None
    clock: Clock = field(default_factory=Clock)


class Router:
    """Maps an event to a target rank for one successor branch."""

    def __init__(self, strategy: RoutingStrategy, world_size: int, rank: int, window_ms: int | None = None):
        self.strategy = RoutingStrategy(strategy)
        self.world_size = world_size
        self.rank = rank
        if self.strategy is RoutingStrategy.SHARD_BY_WINDOW and not window_ms:
            raise ConfigError("window routing needs window_ms")
        self.window_ms = window_ms

    def target(self, e: Event) -> int:
        s = self.strategy
        ws = self.world_size
        if s is RoutingStrategy.SHARD_BY_VALUE or s is RoutingStrategy.SPLIT_BY_CONDITION:
            return e.value % ws
        if s is RoutingStrategy.SHARD_BY_KEY:
            return e.key % ws
        if s is RoutingStrategy.SHARD_BY_WINDOW:
            return (e.event_time // self.window_ms) % ws
        if s is RoutingStrategy.LOCAL_ONLY:
            return self.rank
        return 0  # GATHER

    def route_all(self, events: Iterable[Event], branch: int = 0) -> dict[int, list[Event]]:
        base = branch * self.world_size
        out: dict[int, list[Event]] = collections.defaultdict(list)
        s = self.strategy
        if s is RoutingStrategy.LOCAL_ONLY or s is RoutingStrategy.GATHER:
            out[base + self.target(Event(0, 0, 0))].extend(events)
            return out
        ws = self.world_size
        if s is RoutingStrategy.SHARD_BY_KEY:
            for e in events:
                out[base + e.key % ws].append(e)
        elif s is RoutingStrategy.SHARD_BY_WINDOW:
            w = self.window_ms
            for e in events:
                out[base + (e.event_time // w) % ws].append(e)
        else:
            for e in events:
                out[base + e.value % ws].append(e)
        return out


def default_route(op: OperatorDescriptor, succ: OperatorDescriptor) -> RoutingStrategy:
    if op.pipelined:
        return RoutingStrategy.LOCAL_ONLY
    if succ.kind == "sink":
        return RoutingStrategy.GATHER
    if op.kind == "aggregation" and op.params.get("stage") == "pre":
        return RoutingStrategy.SHARD_BY_WINDOW
    if succ.kind in ("aggregation", "reduce") and (
        succ.kind == "reduce" or succ.params.get("group", "key") == "all"
    ):
        return RoutingStrategy.SHARD_BY_WINDOW
    if succ.kind in ("aggregation", "join") or not op.stateless:
        return RoutingStrategy.SHARD_BY_KEY
    return RoutingStrategy.SHARD_BY_VALUE


class Operator:
    """Per-rank operator instance driven by a vertex's processing threads.

    Stateless operators return routed output from :meth:`process`; stateful
    ones buffer into window state and return output from :meth:`release`.
    """

    stateful = False

    def __init__(self, desc: OperatorDescriptor, ctx: OpContext):
        self.desc = desc
        self.ctx = ctx
        self.rank = ctx.rank
        self.world_size = ctx.world_size
        self.counters: collections.Counter[str] = collections.Counter()
        self._counter_lock = threading.Lock()
        self.routers = [self._make_router(s) for s in desc.successors]

    def _make_router(self, succ_id: int) -> Router:
        succ = self.ctx.topology[succ_id] if self.ctx.topology is not None else None
        override = self.desc.params.get("route")
        if self.desc.pipelined:
            strategy = RoutingStrategy.LOCAL_ONLY
        elif override:
            strategy = RoutingStrategy(override)
        elif succ is not None:
            strategy = default_route(self.desc, succ)
        else:
            strategy = RoutingStrategy.SHARD_BY_VALUE
        window_ms = self.desc.params.get("window_ms") or (succ.params.get("window_ms") if succ else None)
        return Router(strategy, self.world_size, self.rank, window_ms)

    def count(self, name: str, n: int = 1) -> None:
        if n:
            with self._counter_lock:
                self.counters[name] += n

    def route(self, events: list[Event], branch: int = 0) -> dict[int, list[Event]]:
        if not self.routers:
            return {}
        return self.routers[branch].route_all(events, branch)

    def process(self, events: list[Event], in_index: int) -> dict[int, list[Event]]:
        raise NotImplementedError

    def release(self, upto_window: int) -> dict[int, list[Event]]:
        return {}

    def open_windows(self) -> int:
        return 0


OperatorFactory = Callable[[OperatorDescriptor, OpContext], Operator]
_REGISTRY: dict[str, OperatorFactory] = {}


def register(kind: str):
    def deco(cls):
        _REGISTRY[kind] = cls
        return cls

    return deco


def make_operator(desc: OperatorDescriptor, ctx: OpContext) -> Operator:
    if not _REGISTRY:
        from . import io, stateful, stateless  # noqa: F401
    try:
        factory = _REGISTRY[desc.kind]
    except KeyError:
        raise ConfigError(f"unknown operator kind {desc.kind!r}") from None
    return factory(desc, ctx)
