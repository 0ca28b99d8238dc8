"""Topologies for the SWA, YSB and YSB* benchmarks."""
from __future__ import annotations

from dataclasses import asdict

from ..runtime.topology import OperatorDescriptor, Topology
from .generator import GeneratorConfig

WORKLOADS = ("swa", "ysb", "ysb-star")


def _gen_params(gen: GeneratorConfig, window_ms: int, log: bool) -> dict:
    p = asdict(gen)
    p["window_ms"] = window_ms
    if log:
        p["log"] = True
    return p


def build_swa_topology(gen: GeneratorConfig, window_ms: int = 10_000, log: bool = False) -> Topology:
    """Generator -> Aggregation(count of all events) -> Sink."""
    ops = [
        OperatorDescriptor(0, "generator", [], [1], params=_gen_params(gen, window_ms, log), name="generator"),
        OperatorDescriptor(
            1, "aggregation", [0], [2],
            params={"function": "count", "group": "all", "window_ms": window_ms}, name="aggregation",
        ),
        OperatorDescriptor(2, "sink", [1], [], params={"window_ms": window_ms}, name="sink"),
    ]
    return Topology(ops)


def build_ysb_topology(gen: GeneratorConfig, window_ms: int = 10_000, log: bool = False) -> Topology:
    """Generator -> Filter(view) -> StaticJoin(ad -> campaign) -> Aggregation(count per campaign) -> Sink."""
    table = {"ysb": {"num_campaigns": gen.num_campaigns, "ads_per_campaign": gen.ads_per_campaign}}
    ops = [
        OperatorDescriptor(
            0, "generator", [], [1], params={**_gen_params(gen, window_ms, log), "route": "key"}, name="generator"
        ),
        OperatorDescriptor(1, "filter", [0], [2], params={"predicate": ["event_type", "view"]}, name="filter"),
        OperatorDescriptor(2, "static_join", [1], [3], params=table, name="static_join"),
        OperatorDescriptor(
            3, "aggregation", [2], [4], params={"function": "count", "window_ms": window_ms}, name="aggregation"
        ),
        OperatorDescriptor(4, "sink", [3], [], params={"window_ms": window_ms}, name="sink"),
    ]
    return Topology(ops)


def build_ysb_star_topology(gen: GeneratorConfig, window_ms: int = 10_000, log: bool = False) -> Topology:
    """Click/view ratio per campaign.

    Generator -> Split(click | view); each branch StaticJoin -> pre-aggregation
    -> global aggregation (count per campaign); Join(clicks, views) emits the
    ratio in micro-units -> Sink. Nine operators plus the sink.
    """
    from ..ops.stateful import preaggregate_then_global

    table = {"ysb": {"num_campaigns": gen.num_campaigns, "ads_per_campaign": gen.ads_per_campaign}}
    agg = {"function": "count", "window_ms": window_ms}
    ops = [
        OperatorDescriptor(0, "generator", [], [1], params=_gen_params(gen, window_ms, log), name="generator"),
        OperatorDescriptor(
            1, "split", [0], [2, 3],
            params={"conditions": [["event_type", "click"], ["event_type", "view"]]}, name="split",
        ),
        OperatorDescriptor(2, "static_join", [1], [4], params=table, name="static_join_click"),
        OperatorDescriptor(3, "static_join", [1], [5], params=table, name="static_join_view"),
    ]
    click_pre, click_glob = preaggregate_then_global(
        OperatorDescriptor(4, "aggregation", [2], [8], params=agg, name="count_click"), global_id=6
    )
    view_pre, view_glob = preaggregate_then_global(
        OperatorDescriptor(5, "aggregation", [3], [8], params=agg, name="count_view"), global_id=7
    )
    ops += [click_pre, view_pre, click_glob, view_glob]
    ops += [
        OperatorDescriptor(8, "join", [6, 7], [9], params={"combine": "ratio_micro", "window_ms": window_ms}, name="join"),
        OperatorDescriptor(9, "sink", [8], [], params={"window_ms": window_ms}, name="sink"),
    ]
    return Topology(sorted(ops, key=lambda o: o.op_id))


BUILDERS = {
    "swa": build_swa_topology,
    "ysb": build_ysb_topology,
    "ysb-star": build_ysb_star_topology,
}


def build_topology(workload: str, gen: GeneratorConfig, window_ms: int = 10_000, log: bool = False) -> Topology:
    try:
        builder = BUILDERS[workload]
    except KeyError:
        raise ValueError(f"unknown workload {workload!r}; choose from {WORKLOADS}") from None
    return builder(gen, window_ms, log)


def sink_id(topology: Topology) -> int:
    (s,) = topology.sinks
    return s
