"""One-to-one operators: Map, Filter, Split, StaticJoin.

Event time and payload pass through untouched; only key/value may change.
"""
from __future__ import annotations

import csv
import operator
from pathlib import Path
from typing import Callable, Mapping

from ..bench import schema
from ..core import ConfigError, Event
from .base import Operator, OpContext, register
from ..runtime.topology import OperatorDescriptor

_MAP_FUNCTIONS: dict[str, Callable[[int], Callable[[int], int]]] = {
    "identity": lambda _: (lambda v: v),
    "mul": lambda k: (lambda v: v * k),
    "add": lambda k: (lambda v: v + k),
    "mod": lambda k: (lambda v: v % k),
}

_COMPARE = {"eq": operator.eq, "ne": operator.ne, "lt": operator.lt, "le": operator.le, "gt": operator.gt, "ge": operator.ge}


def value_function(spec) -> Callable[[int], int]:
    """``callable`` | ``"identity"`` | ``["mul", 2]``."""
    if callable(spec):
        return spec
    if isinstance(spec, str):
        spec = [spec, None]
    name, arg = spec
    try:
        return _MAP_FUNCTIONS[name](arg)
    except KeyError:
        raise ConfigError(f"unknown map function {name!r}") from None


def event_predicate(spec) -> Callable[[Event], bool]:
    """``callable`` | ``["event_type", "view"]`` | ``["key", "lt", 5]`` | ``["value", "ge", 3]`` | ``"true"``."""
    if callable(spec):
        return spec
    if spec in ("true", True):
        return lambda e: True
    if spec in ("false", False):
        return lambda e: False
    field_name, *rest = spec
    if field_name == "event_type":
        code = schema.type_code(rest[0])
        return lambda e: e.value % 3 == code
    if field_name in ("key", "value") and len(rest) == 2:
        cmp = _COMPARE[rest[0]]
        arg = rest[1]
        idx = 0 if field_name == "key" else 1
        return lambda e: cmp(e[idx], arg)
    raise ConfigError(f"cannot build predicate from {spec!r}")


@register("map")
class Map(Operator):
    def __init__(self, desc: OperatorDescriptor, ctx: OpContext):
        super().__init__(desc, ctx)
        self.fn = value_function(desc.params.get("fn", "identity"))

    def process(self, events, in_index):
        f = self.fn
        out = [e._replace(value=f(e.value)) for e in events]
        return self.route(out)


@register("filter")
class Filter(Operator):
    def __init__(self, desc: OperatorDescriptor, ctx: OpContext):
        super().__init__(desc, ctx)
        self.predicate = event_predicate(desc.params.get("predicate", "true"))

    def process(self, events, in_index):
        p = self.predicate
        kept = [e for e in events if p(e)]
        self.count("filtered_out", len(events) - len(kept))
        return self.route(kept)


@register("split")
class Split(Operator):
    """Routes each event to the branch of its first matching condition.

    Slot index is ``branch * world_size + value % world_size``. Events matching
    no condition are dropped and counted; events matching several go to the
    first and are counted as ambiguous.
    """

    def __init__(self, desc: OperatorDescriptor, ctx: OpContext):
        super().__init__(desc, ctx)
        conds = desc.params.get("conditions")
        if not conds:
            raise ConfigError("split needs at least one condition")
        self.conditions = [event_predicate(c) for c in conds]
        if desc.successors and len(self.conditions) != len(desc.successors):
            raise ConfigError(
                f"split op {desc.op_id}: {len(self.conditions)} conditions for {len(desc.successors)} successors"
            )

    def process(self, events, in_index):
        branches: list[list[Event]] = [[] for _ in self.conditions]
        unmatched = ambiguous = 0
        conds = self.conditions
        for e in events:
            hits = [i for i, c in enumerate(conds) if c(e)]
            if not hits:
                unmatched += 1
                continue
            if len(hits) > 1:
                ambiguous += 1
            branches[hits[0]].append(e)
        self.count("split_unmatched", unmatched)
        self.count("split_ambiguous", ambiguous)
        out: dict[int, list[Event]] = {}
        for i, evs in enumerate(branches):
            if evs:
                out.update(self.route(evs, branch=i))
        return out


def load_table(params: Mapping) -> dict[int, int]:
    if "table" in params:
        t = params["table"]
        items = t.items() if isinstance(t, Mapping) else t
        return {int(k): int(v) for k, v in items}
    if "csv" in params:
        with open(Path(params["csv"]), newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
        if rows and not rows[0][0].strip().isdigit():
            rows = rows[1:]
        return {int(k): int(v) for k, v in rows}
    if "ysb" in params:
        return schema.ysb_campaign_table(**params["ysb"])
    raise ConfigError("static_join needs one of 'table', 'csv' or 'ysb'")


@register("static_join")
class StaticJoin(Operator):
    """Replaces each event's key by its entry in an immutable lookup table."""

    def __init__(self, desc: OperatorDescriptor, ctx: OpContext):
        super().__init__(desc, ctx)
        self.table = dict(load_table(desc.params))

    def process(self, events, in_index):
        table = self.table
        out = []
        for e in events:
            joined = table.get(e.key)
            if joined is not None:
                out.append(e._replace(key=joined))
        self.count("dropped", len(events) - len(out))
        return self.route(out)
