"""Windowed operators: Reduce, Aggregation (single, pre and global stage), Join.

State lives in a two-level map ``window_id -> key -> [state, max_event_time]``.
A window is released once every incoming endpoint has sent a marker covering
it; the owning vertex serialises all calls under one mutex.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Any, Callable

from ..core import ConfigError, Event, WindowSpec
from ..runtime.topology import OperatorDescriptor, TopologyError
from .base import Operator, OpContext, register, stamp_release

MICRO = 1_000_000


@dataclass(frozen=True)
class AggregateFunction:
    name: str
    init: Callable[[], Any]
    combine: Callable[[Any, int], Any]
    merge: Callable[[Any, Any], Any] | None
    finalize: Callable[[Any], int]

    @property
    def mergeable(self) -> bool:
        return self.merge is not None


AGGREGATES = {
    "count": AggregateFunction("count", lambda: 0, lambda s, v: s + 1, lambda a, b: a + b, lambda s: s),
    "sum": AggregateFunction("sum", lambda: 0, lambda s, v: s + v, lambda a, b: a + b, lambda s: s),
    "max": AggregateFunction("max", lambda: 0, max, max, lambda s: s),
    "min": AggregateFunction("min", lambda: None, lambda s, v: v if s is None else min(s, v),
                             lambda a, b: a if b is None else b if a is None else min(a, b), lambda s: s),
    # Partial sets cannot travel as a single u64, so no two-stage form.
    "distinct": AggregateFunction("distinct", set, lambda s, v: s | {v}, None, len),
}


def aggregate(name: str | AggregateFunction) -> AggregateFunction:
    if isinstance(name, AggregateFunction):
        return name
    try:
        return AGGREGATES[name]
    except KeyError:
        raise ConfigError(f"unknown aggregate function {name!r}") from None


class DuplicateMarker(Exception):
    pass


class WatermarkTracker:
    """Cumulative per-endpoint window markers.

    ``observe`` returns the window ids that just became complete on every
    endpoint, oldest first. Before all endpoints have reported, nothing is
    complete.
    """

    def __init__(self, n_endpoints: int):
        self.marks: list[int | None] = [None] * n_endpoints
        self.low: int | None = None

    def observe(self, index: int, window: int) -> list[int]:
        cur = self.marks[index]
        if cur is not None and window <= cur:
            raise DuplicateMarker(f"endpoint {index}: marker {window} after {cur}")
        self.marks[index] = window
        if any(m is None for m in self.marks):
            return []
        new_low = min(self.marks)
        if self.low is None:
            self.low = new_low
            return [new_low]
        if new_low <= self.low:
            return []
        done = list(range(self.low + 1, new_low + 1))
        self.low = new_low
        return done


class WindowStore:
    """``window -> key -> [state, max_event_time]`` with release-once bookkeeping."""

    def __init__(self, fn: AggregateFunction):
        self.fn = fn
        self.windows: dict[int, dict[int, list]] = {}
        self.max_time: dict[int, int] = {}
        self.released_upto: int | None = None

    def is_late(self, window: int) -> bool:
        return self.released_upto is not None and window <= self.released_upto

    def add(self, window: int, key: int, value: int, event_time: int, partial: bool = False) -> bool:
        if self.is_late(window):
            return False
        inner = self.windows.get(window)
        if inner is None:
            inner = self.windows[window] = {}
            self.max_time[window] = event_time
        elif event_time > self.max_time[window]:
            self.max_time[window] = event_time
        cell = inner.get(key)
        if cell is None:
            cell = inner[key] = [self.fn.init(), event_time]
        elif event_time > cell[1]:
            cell[1] = event_time
        cell[0] = self.fn.merge(cell[0], value) if partial else self.fn.combine(cell[0], value)
        return True

    def release(self, upto: int) -> list[tuple[int, dict[int, list]]]:
        """Pop every window ``<= upto``, oldest first; later adds to them are late."""
        ready = sorted(w for w in self.windows if w <= upto)
        out = [(w, self.windows.pop(w)) for w in ready]
        for w in ready:
            self.max_time.pop(w, None)
        if self.released_upto is None or upto > self.released_upto:
            self.released_upto = upto
        return out

    def __len__(self) -> int:
        return len(self.windows)


class _Windowed(Operator):
    stateful = True

    def __init__(self, desc: OperatorDescriptor, ctx: OpContext):
        super().__init__(desc, ctx)
        self.spec = WindowSpec(int(desc.params.get("window_ms", 10_000)))

    def _emit(self, events: list[Event]) -> dict[int, list[Event]]:
        out: dict[int, list[Event]] = {}
        for branch in range(len(self.routers)):
            for slot, evs in self.route(events, branch).items():
                out.setdefault(slot, []).extend(evs)
        self.count("released_events", len(events))
        return out


@register("aggregation")
class Aggregation(_Windowed):
    """Per-(window, key) fold.

    ``stage``: ``single`` folds raw values and finalises; ``pre`` folds raw values
    and emits partial state; ``global`` merges partial states and finalises.
    ``group="all"`` folds every event under key 0.
    """

    def __init__(self, desc: OperatorDescriptor, ctx: OpContext):
        super().__init__(desc, ctx)
        self.fn = aggregate(desc.params.get("function", "count"))
        self.stage = desc.params.get("stage", "single")
        if self.stage not in ("single", "pre", "global"):
            raise ConfigError(f"unknown aggregation stage {self.stage!r}")
        if self.stage != "single" and not self.fn.mergeable:
            raise TopologyError(f"{self.fn.name} is not mergeable; use single-stage aggregation")
        self.group_all = desc.params.get("group", "key") == "all"
        self.store = WindowStore(self.fn)

    def process(self, events, in_index):
        size = self.spec.window_size_ms
        add = self.store.add
        partial = self.stage == "global"
        late = 0
        for e in events:
            if not add(e.event_time // size, 0 if self.group_all else e.key, e.value, e.event_time, partial):
                late += 1
        self.count("late", late)
        return {}

    def release(self, upto_window):
        finalize = self.fn.finalize if self.stage != "pre" else (lambda s: s)
        stamp = stamp_release(self.ctx.clock.now_ms())
        out = []
        for _, keys in self.store.release(upto_window):
            for key, (state, t) in keys.items():
                out.append(Event(key, finalize(state), t, stamp))
        return self._emit(out)

    def open_windows(self):
        return len(self.store)


@register("reduce")
class Reduce(Aggregation):
    """Whole-window fold; every event contributes to key 0."""

    def __init__(self, desc: OperatorDescriptor, ctx: OpContext):
        desc = replace(desc, params={**desc.params, "group": "all"})
        super().__init__(desc, ctx)


def ratio_micro(left: int, right: int) -> int | None:
    return None if right == 0 else (MICRO * left) // right


JOIN_COMBINERS: dict[str, Callable[[int, int], int | None]] = {
    "ratio_micro": ratio_micro,
    "sum": lambda a, b: a + b,
    "left": lambda a, b: a,
}


@register("join")
class Join(_Windowed):
    """Windowed inner equi-join on key of two streams.

    Incoming endpoints from the first predecessor form the left side, the
    second predecessor the right. Values arriving twice for one (window, key)
    on a side are summed.
    """

    def __init__(self, desc: OperatorDescriptor, ctx: OpContext):
        super().__init__(desc, ctx)
        if len(desc.predecessors) != 2:
            raise TopologyError(f"join op {desc.op_id} needs exactly 2 predecessors")
        name = desc.params.get("combine", "ratio_micro")
        try:
            self.combine = JOIN_COMBINERS[name]
        except KeyError:
            raise ConfigError(f"unknown join combiner {name!r}") from None
        self.sides = (WindowStore(AGGREGATES["sum"]), WindowStore(AGGREGATES["sum"]))

    def process(self, events, in_index):
        store = self.sides[in_index // self.world_size]
        size = self.spec.window_size_ms
        late = 0
        for e in events:
            if not store.add(e.event_time // size, e.key, e.value, e.event_time):
                late += 1
        self.count("late", late)
        return {}

    def release(self, upto_window):
        left = dict(self.sides[0].release(upto_window))
        right = dict(self.sides[1].release(upto_window))
        stamp = stamp_release(self.ctx.clock.now_ms())
        out = []
        unmatched = zero = 0
        for w in sorted(left.keys() | right.keys()):
            lk, rk = left.get(w, {}), right.get(w, {})
            unmatched += len(lk.keys() ^ rk.keys())
            for key in sorted(lk.keys() & rk.keys()):
                (lv, lt), (rv, rt) = lk[key], rk[key]
                value = self.combine(lv, rv)
                if value is None:
                    zero += 1
                    continue
                out.append(Event(key, value, max(lt, rt), stamp))
        self.count("join_unmatched", unmatched)
        self.count("dropped", zero)
        return self._emit(out)

    def open_windows(self):
        return len(self.sides[0].windows.keys() | self.sides[1].windows.keys())


def preaggregate_then_global(desc: OperatorDescriptor, global_id: int) -> tuple[OperatorDescriptor, OperatorDescriptor]:
    """Expand one logical aggregation into a pre-aggregator and a global aggregator.

    ``desc`` keeps its id, predecessors and parameters and becomes the
    pre-aggregation stage; the global stage gets ``global_id`` and inherits the
    original successors. Successor descriptors must be repointed by the caller.
    """
    fn = aggregate(desc.params.get("function", "count"))
    if not fn.mergeable:
        raise TopologyError(f"{fn.name} cannot be pre-aggregated; build a single-stage aggregation")
    if desc.kind != "aggregation":
        raise TopologyError(f"op {desc.op_id} is {desc.kind}, not an aggregation")
    pre = replace(
        desc,
        successors=[global_id],
        params={**desc.params, "stage": "pre"},
        name=(desc.name or "aggregation") + "_pre",
    )
    glob = OperatorDescriptor(
        op_id=global_id,
        kind="aggregation",
        predecessors=[desc.op_id],
        successors=list(desc.successors),
        params={**desc.params, "stage": "global"},
        name=(desc.name or "aggregation") + "_global",
    )
    return pre, glob
