import threading

import pytest

from tagflow.bench.generator import GeneratorConfig
from tagflow.bench.workloads import build_ysb_topology
from tagflow.core import ChannelTag, Event, Message, MessageKind
from tagflow.ops.base import Clock
from tagflow.runtime.dataflow import build_dataflow, stream_process
from tagflow.runtime.local import run_local
from tagflow.runtime.topology import OperatorDescriptor, Topology, TopologyError, linear
from tagflow.transport import InProcessHub, TransportConfig


def gen_params(rate=1000, duration=3, window_ms=1000, **extra):
    g = GeneratorConfig(target_rate=rate, duration_s=duration, paced=False)
    return {**g.to_dict(), "window_ms": window_ms, **extra}


def built(topology, world_size=1, rank=0):
    hub = InProcessHub(TransportConfig(world_size=world_size))
    return build_dataflow(topology, world_size, rank, hub.transport(rank), clock=Clock(0)), hub


def drain(q):
    out = []
    while len(q):
        out.append(q.get(timeout=0))
    return out


def test_endpoint_counts_linear():
    t = linear([("generator", gen_params()), ("map", {}), ("sink", {})])
    inst, _ = built(t, world_size=2)
    v = inst.vertices[1]
    assert len(v.in_endpoints) == 2 and len(v.out_endpoints) == 2


def test_split_endpoint_count():
    ops = [
        OperatorDescriptor(0, "generator", [], [1], params=gen_params()),
        OperatorDescriptor(1, "split", [0], [2, 3], params={"conditions": [["event_type", "click"], "true"]}),
        OperatorDescriptor(2, "sink", [1], []),
        OperatorDescriptor(3, "sink", [1], []),
    ]
    inst, _ = built(Topology(ops), world_size=4)
    assert len(inst.vertices[1].out_endpoints) == 8


def test_out_tags_point_at_successor_ranks():
    t = linear([("generator", gen_params()), ("map", {}), ("sink", {})])
    inst, _ = built(t, world_size=3, rank=1)
    tags = [ep.tag for ep in inst.vertices[1].out_endpoints]
    assert tags == [ChannelTag(1, 1, r, 2) for r in range(3)]
    in_tags = [ep.tag for ep in inst.vertices[1].in_endpoints]
    assert in_tags == [ChannelTag(r, 0, 1, 1) for r in range(3)]


@pytest.mark.parametrize("ws", [1, 2, 4])
def test_thread_plan_formula(ws):
    t = build_ysb_topology(GeneratorConfig(target_rate=1000, duration_s=1, paced=False))
    inst, _ = built(t, world_size=ws)
    for op_id, plan in inst.thread_plan().items():
        d = t[op_id]
        assert plan["listener"] == plan["processor"] == d.indegree * ws
        assert plan["sender"] == d.outdegree * ws
        assert plan["ingestion"] == (1 if not d.predecessors else 0)


def test_thread_plan_pipelined_bypass():
    t = build_ysb_topology(GeneratorConfig(target_rate=1000, duration_s=1, paced=False)).with_pipelining(True)
    inst, _ = built(t, world_size=2)
    plan = inst.thread_plan()
    # generator and filter are pipelined: one own-rank sender each is bypassed,
    # and the matching listener on filter / static_join is never started
    assert plan[0]["sender"] == 1 and plan[1]["listener"] == 1 and plan[2]["listener"] == 1
    assert plan[1]["processor"] == 2 and plan[3]["listener"] == 2


def test_bad_rank():
    t = linear([("generator", gen_params()), ("sink", {})])
    hub = InProcessHub(TransportConfig(world_size=1))
    with pytest.raises(TopologyError):
        build_dataflow(t, 1, 3, hub.transport(0))


def test_marker_needs_every_endpoint():
    t = linear([("generator", gen_params()), ("aggregation", {"window_ms": 1000, "function": "sum"}), ("sink", {})])
    inst, _ = built(t, world_size=2)
    v = inst.vertices[1]
    v.handle(0, Message.data(v.in_endpoints[0].tag, [Event(1, 2, 100)]))
    v.handle(0, Message.marker(v.in_endpoints[0].tag, 0))
    assert all(len(ep.queue) == 0 for ep in v.out_endpoints)
    v.handle(1, Message.marker(v.in_endpoints[1].tag, 0))
    out = [m for ep in v.out_endpoints for m in drain(ep.queue)]
    data = [e for m in out if m.kind is MessageKind.DATA for e in m.events]
    assert [(e.key, e.value, e.event_time) for e in data] == [(1, 2, 100)]
    assert sum(m.kind is MessageKind.WINDOW_MARKER for m in out) == 2


def test_stateless_marker_forwarded_to_every_slot():
    t = linear([("generator", gen_params()), ("map", {"fn": "identity"}), ("sink", {})])
    inst, _ = built(t, world_size=2)
    v = inst.vertices[1]
    for i, ep in enumerate(v.in_endpoints):
        v.handle(i, Message.marker(ep.tag, 4))
    for ep in v.out_endpoints:
        assert [(m.kind, m.window_id) for m in drain(ep.queue)] == [(MessageKind.WINDOW_MARKER, 4)]


def test_terminate_forwarded_once_after_barrier():
    t = linear([("generator", gen_params()), ("map", {}), ("sink", {})])
    inst, _ = built(t, world_size=3)
    v = inst.vertices[1]
    assert v.handle(0, Message.data(v.in_endpoints[0].tag, [Event(0, 3, 0)])) is False
    assert v.handle(0, Message.terminate(v.in_endpoints[0].tag))
    assert v.handle(1, Message.terminate(v.in_endpoints[1].tag))
    assert not any(m.kind is MessageKind.TERMINATE for ep in v.out_endpoints for m in ep.queue.snapshot())
    v.handle(2, Message.terminate(v.in_endpoints[2].tag))
    for ep in v.out_endpoints:
        kinds = [m.kind for m in drain(ep.queue)]
        assert kinds.count(MessageKind.TERMINATE) == 1 and kinds[-1] is MessageKind.TERMINATE
    assert v.done.is_set()


def test_termination_releases_open_windows():
    t = linear([("generator", gen_params()), ("aggregation", {"window_ms": 1000}), ("sink", {})])
    inst, _ = built(t)
    v = inst.vertices[1]
    ep = v.in_endpoints[0]
    v.handle(0, Message.data(ep.tag, [Event(1, 1, 1500), Event(1, 1, 2500)]))
    v.handle(0, Message.terminate(ep.tag))
    msgs = drain(v.out_endpoints[0].queue)
    data = sorted(e.event_time for m in msgs for e in m.events)
    assert data == [1500, 2500]
    assert [m.window_id for m in msgs if m.kind is MessageKind.WINDOW_MARKER] == [1, 2]
    assert v.metrics.unreleased_windows == 0


def test_duplicate_marker_counted():
    t = linear([("generator", gen_params()), ("map", {}), ("sink", {})])
    inst, _ = built(t)
    v = inst.vertices[1]
    ep = v.in_endpoints[0]
    v.handle(0, Message.marker(ep.tag, 3))
    v.handle(0, Message.marker(ep.tag, 3))
    assert v.metrics.protocol_errors == 1


def test_process_errors_are_counted_not_fatal():
    def boom(v):
        raise RuntimeError("bad event")

    t = linear([("generator", gen_params()), ("map", {"fn": boom}), ("sink", {})])
    inst, _ = built(t)
    v = inst.vertices[1]
    assert v.handle(0, Message.data(v.in_endpoints[0].tag, [Event(0, 1, 0)])) is False
    assert v.metrics.errors == 1


def test_one_marker_per_window_reaches_aggregation():
    t = linear([
        ("generator", gen_params(rate=1000, duration=5, window_ms=1000)),
        ("filter", {"predicate": ["event_type", "view"]}),
        ("aggregation", {"window_ms": 1000}),
        ("sink", {"window_ms": 1000}),
    ])
    run = run_local(t, 1, timeout=30)
    m = run.metrics()
    assert m[2]["markers_in"] == 5
    assert m[1]["markers_in"] == 5


def test_terminate_joins_all_threads():
    t = linear([("generator", gen_params()), ("map", {"fn": ["mul", 2]}), ("sink", {})])
    hub = InProcessHub(TransportConfig(world_size=2))
    insts = [build_dataflow(t, 2, r, hub.transport(r), clock=Clock(0)) for r in range(2)]
    before = threading.active_count()
    handle = stream_process(*insts)
    handle.join(30)
    assert handle.finished and not handle.alive_threads()
    handle.join(0)  # already joined: returns at once
    assert threading.active_count() <= before


def test_join_timeout_raises():
    t = linear([("generator", {**gen_params(), "paced": True, "duration_s": 5}), ("sink", {})])
    hub = InProcessHub(TransportConfig(world_size=1))
    inst = build_dataflow(t, 1, 0, hub.transport(0))
    handle = stream_process(inst)
    with pytest.raises(TimeoutError):
        handle.join(0.05)
    handle.abort()
