import pytest
from hypothesis import given
from hypothesis import strategies as st

from tagflow.bench.generator import GeneratorConfig
from tagflow.bench.workloads import build_swa_topology, build_ysb_star_topology, build_ysb_topology
from tagflow.runtime.topology import (
    OperatorDescriptor,
    Topology,
    TopologyError,
    check_pipelinable,
    linear,
    pipelining_eligible,
)

GEN = GeneratorConfig(target_rate=1000, duration_s=1, paced=False)


def chain(*kinds):
    return linear([(k, {"window_ms": 1000} if k in ("aggregation", "reduce") else {}) for k in kinds])


def test_linear_chain_edges():
    t = chain("generator", "map", "sink")
    assert t.sources == [0] and t.sinks == [2]
    assert t[1].predecessors == [0] and t[1].successors == [2]
    assert t.order == [0, 1, 2]


def test_cycle_rejected_with_edge():
    ops = [
        OperatorDescriptor(0, "map", [1], [1]),
        OperatorDescriptor(1, "map", [0], [0]),
    ]
    with pytest.raises(TopologyError, match="cycle"):
        Topology(ops)


def test_asymmetric_edge_rejected():
    ops = [OperatorDescriptor(0, "generator", [], [1]), OperatorDescriptor(1, "sink", [], [])]
    with pytest.raises(TopologyError):
        Topology(ops)


def test_duplicate_ids_rejected():
    with pytest.raises(TopologyError):
        Topology([OperatorDescriptor(0, "generator"), OperatorDescriptor(0, "sink")])


def test_too_many_operators():
    with pytest.raises(TopologyError):
        linear([("map", {})] * 257)


@pytest.mark.parametrize("kind", ["aggregation", "reduce", "join"])
def test_windowed_op_cannot_be_pipelined(kind):
    t = chain("generator", "map", "sink")
    ops = [OperatorDescriptor(o.op_id, o.kind, o.predecessors, o.successors) for o in t.operators]
    ops[1] = OperatorDescriptor(1, kind, [0], [2], pipelined=True, params={"window_ms": 1000})
    with pytest.raises(TopologyError):
        Topology(ops)


def test_pipelining_into_keyed_aggregation_rejected():
    t = chain("generator", "map", "aggregation", "sink")
    with pytest.raises(TopologyError, match="1->2"):
        check_pipelinable(t[1], t)
    assert pipelining_eligible(t[0], t)


def test_with_pipelining_marks_only_eligible():
    t = chain("generator", "map", "filter", "aggregation", "sink").with_pipelining(True)
    assert [o.pipelined for o in t.operators] == [True, True, False, False, False]
    off = t.with_pipelining(False)
    assert not any(o.pipelined for o in off.operators)


def test_dict_roundtrip():
    t = build_ysb_star_topology(GEN).with_pipelining(True)
    again = Topology.from_dict(t.to_dict())
    assert again.to_dict() == t.to_dict()


@pytest.mark.parametrize(
    "builder,n_ops", [(build_swa_topology, 3), (build_ysb_topology, 5), (build_ysb_star_topology, 10)]
)
def test_workload_operator_counts(builder, n_ops):
    t = builder(GEN)
    assert len(t.operators) == n_ops
    assert len(t.sinks) == 1 and t[t.sinks[0]].kind == "sink"


def test_ysb_star_shape():
    t = build_ysb_star_topology(GEN)
    kinds = [t[i].kind for i in range(10)]
    assert kinds == ["generator", "split", "static_join", "static_join", "aggregation", "aggregation",
                     "aggregation", "aggregation", "join", "sink"]
    assert t[8].predecessors == [6, 7]
    assert [t[i].params["stage"] for i in (4, 5, 6, 7)] == ["pre", "pre", "global", "global"]


@given(st.integers(2, 20), st.data())
def test_random_dag_order_respects_edges(n, data):
    edges = set()
    for j in range(1, n):
        for i in data.draw(st.sets(st.integers(0, j - 1), min_size=1, max_size=3)):
            edges.add((i, j))
    ops = [
        OperatorDescriptor(k, "map", sorted(i for i, j in edges if j == k), sorted(j for i, j in edges if i == k))
        for k in range(n)
    ]
    pos = {op: p for p, op in enumerate(Topology(ops).order)}
    assert all(pos[i] < pos[j] for i, j in edges)
