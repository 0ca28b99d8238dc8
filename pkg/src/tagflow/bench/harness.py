"""Run a benchmark workload on N local ranks and collect its results."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

from ..ops.base import Clock
from ..ops.io import WindowResultRecord
from ..runtime.local import LocalRun, run_local
from ..transport import Backend
from .generator import GeneratorConfig
from .report import RunSummary, summarize
from .workloads import build_topology, sink_id

log = logging.getLogger(__name__)


@dataclass
class WorkloadResult:
    workload: str
    world_size: int
    pipelining: bool
    records: list[WindowResultRecord]
    summary: RunSummary
    metrics: dict
    run: LocalRun
    event_logs: list[list[tuple[int, int, int]]] | None = None

    @property
    def event_log(self) -> list[tuple[int, int, int]]:
        return [e for lg in self.event_logs or [] for e in lg]


def expected_window_count(gen: GeneratorConfig, window_ms: int, keys: int = 1) -> int:
    """Windows a complete unpaced run covers, times ``keys`` result rows per window."""
    last_t = (gen.instance_events(0, 1) - 1) * 1000 // gen.target_rate
    return (last_t // window_ms + 1) * keys


def run_workload(
    workload: str,
    gen: GeneratorConfig,
    world_size: int = 1,
    window_ms: int = 10_000,
    pipelining: bool = False,
    backend: Backend | str = Backend.IN_PROCESS,
    log_events: bool = False,
    clock: Clock | None = None,
    queue_capacity: int = 1024,
    timeout: float | None = 600,
    serialize: bool = False,
) -> WorkloadResult:
    topo = build_topology(workload, gen, window_ms, log=log_events).with_pipelining(pipelining)
    run = run_local(
        topo, world_size, timeout=timeout, backend=backend, clock=clock,
        queue_capacity=queue_capacity, serialize=serialize,
    )
    sink = sink_id(topo)
    records = [r for s in run.operators(sink) for r in s.records]
    metrics = run.metrics()
    gens = run.operators(topo.sources[0])
    starved = any(g.generator.stats.starved_ticks for g in gens)
    summary = summarize(records, metrics, gen.target_rate, topo.sources, generator_starved=starved)
    logs = [g.generator.log for g in gens] if log_events else None
    return WorkloadResult(workload, world_size, pipelining, records, summary, metrics, run, logs)


def rate_runner(workload: str, base: GeneratorConfig, world_size: int, window_ms: int, pipelining: bool, **kw):
    """``rate -> RunSummary`` closure for the sustainable-throughput search."""

    def run(rate: float) -> RunSummary:
        gen = replace(base, target_rate=int(rate))
        res = run_workload(workload, gen, world_size, window_ms, pipelining, **kw)
        log.info("rate %s: mean latency %.1f ms, %d windows", rate, res.summary.mean_latency_ms,
                 res.summary.windows_processed)
        return res.summary

    return run
