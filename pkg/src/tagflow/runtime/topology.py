from __future__ import annotations

import graphlib
from dataclasses import dataclass, field, replace
from typing import Any

from ..core import ConfigError

# Operator kinds whose per-event output does not depend on other events.
STATELESS_KINDS = frozenset({"generator", "replay", "map", "filter", "split", "static_join"})
# Successors that accept arbitrarily partitioned input, so a same-rank shortcut
# into them cannot change results.
PARTITION_AGNOSTIC_KINDS = STATELESS_KINDS | {"sink"}


class TopologyError(ConfigError):
    pass


@dataclass
class OperatorDescriptor:
    op_id: int
    kind: str
    predecessors: list[int] = field(default_factory=list)
    successors: list[int] = field(default_factory=list)
    pipelined: bool = False
    params: dict[str, Any] = field(default_factory=dict)
    name: str = ""

    @property
    def indegree(self) -> int:
        return len(self.predecessors)

    @property
    def outdegree(self) -> int:
        return len(self.successors)

    @property
    def stateless(self) -> bool:
        return self.kind in STATELESS_KINDS

    def to_dict(self) -> dict:
        return {
            "op_id": self.op_id,
            "kind": self.kind,
            "name": self.name,
            "predecessors": list(self.predecessors),
            "successors": list(self.successors),
            "pipelined": self.pipelined,
            "params": dict(self.params),
        }


def _accepts_any_partitioning(desc: OperatorDescriptor) -> bool:
    if desc.kind in PARTITION_AGNOSTIC_KINDS:
        return True
    return desc.kind == "aggregation" and desc.params.get("stage") == "pre"


class Topology:
    """A validated operator DAG. Build errors name the offending edge."""

    def __init__(self, operators: list[OperatorDescriptor]):
        self.operators = list(operators)
        self.by_id = {op.op_id: op for op in self.operators}
        self.validate()

    @property
    def sources(self) -> list[int]:
        return [op.op_id for op in self.operators if not op.predecessors]

    @property
    def sinks(self) -> list[int]:
        return [op.op_id for op in self.operators if not op.successors]

    def __len__(self) -> int:
        return len(self.operators)

    def __getitem__(self, op_id: int) -> OperatorDescriptor:
        return self.by_id[op_id]

    def validate(self) -> None:
        if len(self.operators) > 256:
            raise TopologyError(f"{len(self.operators)} operators exceed the 8-bit op id space")
        if len(self.by_id) != len(self.operators):
            raise TopologyError("duplicate op_id")
        for op in self.operators:
            if not 0 <= op.op_id <= 255:
                raise TopologyError(f"op_id {op.op_id} outside [0, 255]")
            if len(set(op.successors)) != len(op.successors) or len(set(op.predecessors)) != len(op.predecessors):
                raise TopologyError(f"op {op.op_id}: repeated edge")
            for s in op.successors:
                if s not in self.by_id:
                    raise TopologyError(f"edge {op.op_id}->{s}: unknown successor")
                if op.op_id not in self.by_id[s].predecessors:
                    raise TopologyError(f"edge {op.op_id}->{s}: missing from predecessors of {s}")
            for p in op.predecessors:
                if p not in self.by_id:
                    raise TopologyError(f"edge {p}->{op.op_id}: unknown predecessor")
                if op.op_id not in self.by_id[p].successors:
                    raise TopologyError(f"edge {p}->{op.op_id}: missing from successors of {p}")
        sorter = graphlib.TopologicalSorter({op.op_id: op.predecessors for op in self.operators})
        try:
            self.order = list(sorter.static_order())
        except graphlib.CycleError as exc:
            cycle = exc.args[1]
            raise TopologyError(f"cycle through edge {cycle[-2]}->{cycle[-1]}: {cycle}") from None
        for op in self.operators:
            if op.pipelined:
                check_pipelinable(op, self)

    def with_pipelining(self, enabled: bool = True) -> "Topology":
        """Copy with the pipelining flag set on every eligible operator."""
        ops = []
        for op in self.operators:
            ok = enabled and pipelining_eligible(op, self)
            ops.append(replace(op, pipelined=ok, params=dict(op.params)))
        return Topology(ops)

    def to_dict(self) -> dict:
        return {"operators": [op.to_dict() for op in self.operators]}

    @classmethod
    def from_dict(cls, d: dict) -> "Topology":
        ops = []
        for o in d["operators"]:
            ops.append(
                OperatorDescriptor(
                    op_id=int(o["op_id"]),
                    kind=o["kind"],
                    predecessors=[int(x) for x in o.get("predecessors", [])],
                    successors=[int(x) for x in o.get("successors", [])],
                    pipelined=bool(o.get("pipelined", False)),
                    params=dict(o.get("params", {})),
                    name=o.get("name", ""),
                )
            )
        return cls(ops)


def pipelining_eligible(op: OperatorDescriptor, topo: Topology) -> bool:
    try:
        check_pipelinable(op, topo)
    except TopologyError:
        return False
    return True


def check_pipelinable(op: OperatorDescriptor, topo: Topology) -> None:
    if not op.stateless:
        raise TopologyError(f"op {op.op_id} ({op.kind}) is windowed and cannot be pipelined")
    if not op.successors:
        raise TopologyError(f"op {op.op_id} has no successor to pipeline into")
    for s in op.successors:
        succ = topo.by_id[s]
        if not _accepts_any_partitioning(succ):
            raise TopologyError(
                f"edge {op.op_id}->{s}: {succ.kind} needs key-partitioned input, cannot pipeline into it"
            )


def linear(kinds_params: list[tuple[str, dict]], names: list[str] | None = None) -> Topology:
    """Chain operators 0 -> 1 -> ... in the given order."""
    n = len(kinds_params)
    ops = []
    for i, (kind, params) in enumerate(kinds_params):
        ops.append(
            OperatorDescriptor(
                op_id=i,
                kind=kind,
                predecessors=[i - 1] if i else [],
                successors=[i + 1] if i < n - 1 else [],
                params=dict(params),
                name=names[i] if names else kind,
            )
        )
    return Topology(ops)
