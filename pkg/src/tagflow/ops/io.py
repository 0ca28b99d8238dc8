"""Source and sink operators."""
from __future__ import annotations

import threading
from dataclasses import dataclass

from ..bench.generator import EventGenerator, GeneratorConfig
from ..core import Event, WindowSpec, window_id
from ..runtime.topology import OperatorDescriptor
from .base import Operator, OpContext, read_release, register

_GEN_FIELDS = set(GeneratorConfig.__dataclass_fields__)


@register("generator")
class GeneratorSource(Operator):
    """Wraps one :class:`EventGenerator` instance per rank.

    ``params`` holds :class:`GeneratorConfig` fields plus ``window_ms``; with
    ``log: true`` every generated ``(key, value, event_time)`` is kept in
    ``self.generator.log``.
    """

    def __init__(self, desc: OperatorDescriptor, ctx: OpContext):
        super().__init__(desc, ctx)
        p = desc.params
        self.config = GeneratorConfig(**{k: v for k, v in p.items() if k in _GEN_FIELDS})
        self.generator = EventGenerator(
            self.config,
            rank=ctx.rank,
            instances=ctx.world_size,
            window_ms=int(p.get("window_ms", 10_000)),
            clock=ctx.clock,
            log=[] if p.get("log") else None,
        )

    def batches(self):
        return self.generator.batches()

    def process(self, events, in_index):
        out: dict[int, list[Event]] = {}
        for branch in range(len(self.routers)):
            out.update(self.route(events, branch))
        return out


@register("replay")
class ReplaySource(Operator):
    """Emits a fixed event list per rank, in event-time order, with window markers.

    ``params["events"][rank]`` is a list of ``[key, value, event_time]``; ranks
    beyond the list emit nothing.
    """

    def __init__(self, desc: OperatorDescriptor, ctx: OpContext):
        super().__init__(desc, ctx)
        per_rank = desc.params.get("events", [])
        rows = per_rank[ctx.rank] if ctx.rank < len(per_rank) else []
        self.events = sorted((Event(int(k), int(v), int(t)) for k, v, t in rows), key=lambda e: e.event_time)
        self.spec = WindowSpec(int(desc.params.get("window_ms", 10_000)))

    def batches(self):
        size = self.spec.window_size_ms
        cur = None
        batch: list[Event] = []
        for e in self.events:
            w = e.event_time // size
            if cur is not None and w != cur:
                yield ("data", batch)
                batch = []
                for m in range(cur, w):
                    yield ("marker", m)
            cur = w
            batch.append(e)
        if cur is not None:
            yield ("data", batch)
            yield ("marker", cur)

    def process(self, events, in_index):
        out: dict[int, list[Event]] = {}
        for branch in range(len(self.routers)):
            out.update(self.route(events, branch))
        return out


@dataclass(frozen=True)
class WindowResultRecord:
    window_id: int
    key: int
    value: int
    event_time_ms: int
    release_ms: int

    @property
    def latency_ms(self) -> int:
        return self.release_ms - self.event_time_ms

    def row(self) -> tuple[int, ...]:
        return (self.window_id, self.key, self.value, self.event_time_ms, self.release_ms, self.latency_ms)


@register("sink")
class Sink(Operator):
    """Collects windowed events as :class:`WindowResultRecord` rows.

    The release time is read from the 8-byte stamp the windowed operator puts
    in the payload; unstamped events use arrival time.
    """

    def __init__(self, desc: OperatorDescriptor, ctx: OpContext):
        super().__init__(desc, ctx)
        self.spec = WindowSpec(int(desc.params.get("window_ms", 10_000)))
        self.records: list[WindowResultRecord] = []
        self._lock = threading.Lock()

    def process(self, events, in_index):
        now = None
        rows = []
        for e in events:
            rel = read_release(e.payload)
            if rel is None:
                now = now if now is not None else self.ctx.clock.now_ms()
                rel = now
            rows.append(WindowResultRecord(window_id(e.event_time, self.spec), e.key, e.value, e.event_time, rel))
        with self._lock:
            self.records.extend(rows)
        return {}
