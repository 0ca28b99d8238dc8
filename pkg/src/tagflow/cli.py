"""Command-line entry point.

IN_PROCESS runs every rank as threads of this process. SOCKET runs the one
rank given by ``--rank``; start one process per line of the peers file.
Every flag can also be set through a ``TAGFLOW_<FLAG>`` environment variable
(``TAGFLOW_RATE=5000``, ``TAGFLOW_WORLD_SIZE=4``); command-line values win.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .bench.generator import GeneratorConfig
from .bench.harness import expected_window_count, rate_runner
from .bench.report import summarize, write_metrics_csv, write_sink_csv, write_summary_csv
from .bench.st_search import STSearchConfig, find_sustainable_throughput
from .bench.workloads import WORKLOADS, build_topology
from .core import ConfigError
from .ops.base import Clock
from .runtime.topology import Topology
from .transport import Backend, SocketTransport, TransportConfig, read_peers_file

log = logging.getLogger("tagflow")

CONFIG_FILE = "config.json"


@dataclass
class RunConfig:
    workload: str = "swa"
    world_size: int = 1
    backend: str = Backend.IN_PROCESS.value
    rank: int | None = None
    peers: str | None = None
    pipelining: bool = False
    rate: int = 10_000
    duration_s: float = 60.0
    window_ms: int = 10_000
    seed: int = 0
    out: str = "out"
    paced: bool = True
    epoch_ms: int | None = None
    topology: str | None = None
    avg_event_bytes: int = 136
    num_campaigns: int = 100
    ads_per_campaign: int = 10
    queue_capacity: int = 1024
    timeout_s: float | None = None
    st_search: bool = False
    st: STSearchConfig = field(default_factory=STSearchConfig)

    def __post_init__(self):
        if isinstance(self.st, dict):
            self.st = STSearchConfig(**self.st)
        if self.st.rates is not None:
            self.st.rates = list(self.st.rates)
        self.backend = Backend(self.backend).value
        if self.workload not in WORKLOADS:
            raise ConfigError(f"unknown workload {self.workload!r}")
        if not 1 <= self.world_size <= 256:
            raise ConfigError("world_size must be in 1..256")
        if self.rate <= 0 or self.duration_s <= 0 or self.window_ms <= 0:
            raise ConfigError("rate, duration and window must be positive")
        if self.st_search and not self.paced:
            raise ConfigError("--st-search measures latency and needs paced generation")
        socket_mode = self.backend == Backend.SOCKET.value
        if socket_mode != (self.rank is not None):
            raise ConfigError("--rank is required with the socket backend and only allowed there")
        if socket_mode:
            if self.peers is None:
                raise ConfigError("socket backend needs --peers")
            if not 0 <= self.rank < self.world_size:
                raise ConfigError(f"rank {self.rank} outside world of {self.world_size}")
            if self.st_search:
                raise ConfigError("--st-search runs in-process only")

    @property
    def socket_mode(self) -> bool:
        return self.backend == Backend.SOCKET.value

    def generator(self, rate: int | None = None) -> GeneratorConfig:
        return GeneratorConfig(
            target_rate=rate or self.rate,
            duration_s=self.duration_s,
            avg_event_bytes=self.avg_event_bytes,
            num_campaigns=self.num_campaigns,
            ads_per_campaign=self.ads_per_campaign,
            seed=self.seed,
            paced=self.paced,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        return cls(**d)

    def save(self, directory: str | Path) -> Path:
        path = Path(directory) / CONFIG_FILE
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _on_off(s: str) -> bool:
    v = s.strip().lower()
    if v in ("on", "true", "1", "yes"):
        return True
    if v in ("off", "false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected on/off, got {s!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tagflow", description="Run a streaming benchmark workload.")
    p.add_argument("--workload", choices=WORKLOADS, default="swa")
    p.add_argument("--world-size", type=int, default=1)
    p.add_argument("--backend", choices=[b.value for b in Backend], default=Backend.IN_PROCESS.value)
    p.add_argument("--rank", type=int, default=None, help="this process's rank (socket backend)")
    p.add_argument("--peers", default=None, help="file with one 'rank host:port' per line")
    p.add_argument("--pipelining", type=_on_off, default=False, metavar="{on,off}")
    p.add_argument("--rate", type=int, default=10_000, help="events/s over all generator instances")
    p.add_argument("--duration", dest="duration_s", type=float, default=60.0, help="seconds")
    p.add_argument("--window-ms", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out", help="output directory")
    pace = p.add_mutually_exclusive_group()
    pace.add_argument("--paced", dest="paced", action="store_true", default=True,
                      help="token-bucket pacing with wall-clock event times (default)")
    pace.add_argument("--unpaced", dest="paced", action="store_false",
                      help="emit as fast as possible with scheduled event times")
    p.add_argument("--epoch-ms", type=int, default=None,
                   help="shared clock origin in ms since the Unix epoch (socket runs default to 0)")
    p.add_argument("--topology", default=None, help="JSON topology file replacing the built-in workload")
    p.add_argument("--avg-event-bytes", type=int, default=136)
    p.add_argument("--num-campaigns", type=int, default=100)
    p.add_argument("--ads-per-campaign", type=int, default=10)
    p.add_argument("--queue-capacity", type=int, default=1024)
    p.add_argument("--timeout", dest="timeout_s", type=float, default=None, help="abort after this many seconds")
    st = p.add_argument_group("sustainable-throughput search")
    st.add_argument("--st-search", action="store_true", default=False)
    st.add_argument("--st-start", type=float, default=1000)
    st.add_argument("--st-step", type=float, default=1000)
    st.add_argument("--st-max", type=float, default=None)
    st.add_argument("--st-run-duration", type=float, default=20.0)
    st.add_argument("--st-baseline-runs", type=int, default=3)
    st.add_argument("--st-factor", type=float, default=4.0)
    p.add_argument("-v", "--verbose", action="store_true", default=False)
    return p


_BOOL_ENV = {"st_search", "verbose"}


def _apply_env(parser: argparse.ArgumentParser, environ) -> None:
    """Turn ``TAGFLOW_*`` variables into parser defaults (argparse converts string defaults)."""
    defaults = {}
    for action in parser._actions:
        if not action.option_strings or action.dest == "help":
            continue
        name = action.option_strings[-1].lstrip("-").replace("-", "_").upper()
        raw = environ.get(f"TAGFLOW_{name}")
        if raw is None:
            continue
        if action.dest in _BOOL_ENV or name in ("PACED", "UNPACED"):
            val = _on_off(raw)
            defaults[action.dest] = (not val) if name == "UNPACED" else val
        else:
            defaults[action.dest] = raw
    parser.set_defaults(**defaults)


def parse_config(argv: list[str] | None = None, environ=None) -> tuple[RunConfig, bool]:
    parser = build_parser()
    _apply_env(parser, os.environ if environ is None else environ)
    try:
        a = parser.parse_args(argv)
    except argparse.ArgumentTypeError as e:  # raised while converting env defaults
        raise ConfigError(str(e)) from None
    st = STSearchConfig(
        start_rate=a.st_start, rate_step=a.st_step, run_duration_s=a.st_run_duration,
        baseline_runs=a.st_baseline_runs, backpressure_factor=a.st_factor, max_rate=a.st_max,
    )
    cfg = RunConfig(
        workload=a.workload, world_size=a.world_size, backend=a.backend, rank=a.rank, peers=a.peers,
        pipelining=a.pipelining, rate=a.rate, duration_s=a.duration_s, window_ms=a.window_ms, seed=a.seed,
        out=a.out, paced=a.paced, epoch_ms=a.epoch_ms, topology=a.topology,
        avg_event_bytes=a.avg_event_bytes, num_campaigns=a.num_campaigns,
        ads_per_campaign=a.ads_per_campaign, queue_capacity=a.queue_capacity, timeout_s=a.timeout_s,
        st_search=a.st_search, st=st,
    )
    return cfg, a.verbose


def _topology(cfg: RunConfig, rate: int | None = None) -> Topology:
    if cfg.topology is not None:
        topo = Topology.from_dict(json.loads(Path(cfg.topology).read_text()))
    else:
        topo = build_topology(cfg.workload, cfg.generator(rate), cfg.window_ms)
    return topo.with_pipelining(cfg.pipelining)


def _log_metrics(metrics: dict, topo: Topology) -> None:
    for op_id in sorted(metrics):
        m = metrics[op_id]
        log.info(
            "event=op_metrics op=%d name=%s events_in=%d errors=%d protocol_errors=%d late=%d dropped=%d",
            op_id, topo[op_id].name or topo[op_id].kind, m.get("events_in", 0), m.get("errors", 0),
            m.get("protocol_errors", 0), m.get("late", 0), m.get("dropped", 0),
        )


def _names(topo: Topology) -> dict[int, str]:
    return {op.op_id: op.name or op.kind for op in topo.operators}


def _expected(cfg: RunConfig, topo: Topology) -> int | None:
    if cfg.topology is not None or cfg.paced:
        return None
    keys = 1 if cfg.workload == "swa" else cfg.num_campaigns
    return expected_window_count(cfg.generator(), cfg.window_ms, keys)


def run_in_process(cfg: RunConfig, out: Path) -> int:
    from .runtime.local import run_local

    topo = _topology(cfg)
    t0 = time.monotonic()
    run = run_local(
        topo, cfg.world_size, timeout=cfg.timeout_s, backend=Backend.IN_PROCESS,
        clock=Clock(cfg.epoch_ms), queue_capacity=cfg.queue_capacity,
    )
    (sink,) = topo.sinks
    records = [r for s in run.operators(sink) for r in s.records]
    metrics = run.metrics()
    starved = any(
        g.generator.stats.starved_ticks for src in topo.sources for g in run.operators(src) if hasattr(g, "generator")
    )
    summary = summarize(records, metrics, cfg.rate, topo.sources, _expected(cfg, topo), starved)
    write_sink_csv(out / "sink.csv", records)
    write_summary_csv(out / "summary.csv", [summary])
    write_metrics_csv(out / "metrics.csv", metrics, _names(topo))
    _log_metrics(metrics, topo)
    log.info(
        "event=run_done world_size=%d windows=%d events=%d mean_latency_ms=%.1f wall_s=%.2f leftover=%d",
        cfg.world_size, summary.windows_processed, summary.events_processed, summary.mean_latency_ms,
        time.monotonic() - t0, run.leftover_messages(),
    )
    return 1 if any(m.get("errors", 0) or m.get("protocol_errors", 0) for m in metrics.values()) else 0


def run_socket_rank(cfg: RunConfig, out: Path) -> int:
    from .runtime.dataflow import build_dataflow, stream_process

    peers = read_peers_file(cfg.peers)
    if len(peers) != cfg.world_size:
        raise ConfigError(f"peers file lists {len(peers)} ranks, world size is {cfg.world_size}")
    topo = _topology(cfg)
    tcfg = TransportConfig(
        world_size=cfg.world_size, backend=Backend.SOCKET, addresses=peers,
        send_queue_capacity=cfg.queue_capacity,
    )
    transport = SocketTransport(tcfg, cfg.rank)
    transport.start()
    # every process shares the same origin so event times are comparable across hosts
    clock = Clock(0 if cfg.epoch_ms is None else cfg.epoch_ms)
    inst = build_dataflow(topo, cfg.world_size, cfg.rank, transport, clock=clock, queue_capacity=cfg.queue_capacity)
    handle = stream_process(inst)
    try:
        handle.join(cfg.timeout_s)
    finally:
        transport.shutdown()
    metrics = {op_id: v.collect_metrics() for op_id, v in inst.vertices.items()}
    write_metrics_csv(out / f"metrics_rank{cfg.rank}.csv", metrics, _names(topo))
    _log_metrics(metrics, topo)
    (sink,) = topo.sinks
    records = inst.operator(sink).records
    if cfg.rank == 0:
        summary = summarize(records, metrics, cfg.rate, topo.sources, None, False)
        write_sink_csv(out / "sink.csv", records)
        write_summary_csv(out / "summary.csv", [summary])
    log.info("event=rank_done rank=%d records=%d", cfg.rank, len(records))
    return 1 if any(m.get("errors", 0) or m.get("protocol_errors", 0) for m in metrics.values()) else 0


def run_st_search(cfg: RunConfig, out: Path) -> int:
    base = replace(cfg.generator(), duration_s=cfg.st.run_duration_s)
    runner = rate_runner(
        cfg.workload, base, cfg.world_size, cfg.window_ms, cfg.pipelining,
        clock=Clock(cfg.epoch_ms), queue_capacity=cfg.queue_capacity, timeout=cfg.timeout_s,
    )
    summaries = []

    def run(rate):
        s = runner(rate)
        summaries.append(s)
        return s

    report = find_sustainable_throughput(run, cfg.st)
    report.write_csv(out / "st_report.csv")
    write_summary_csv(out / "summary.csv", summaries)
    if report.below_start:
        log.info("event=st_done sustainable_rate=below_start")
    else:
        log.info("event=st_done sustainable_rate=%s exhausted=%s baseline_ms=%.1f",
                 report.sustainable_rate, report.exhausted, report.baseline_latency_ms or 0.0)
    return 0


def main(argv: list[str] | None = None) -> int:
    try:
        cfg, verbose = parse_config(argv)
    except SystemExit as e:  # argparse usage errors already printed
        return int(e.code or 0)
    except (ConfigError, ValueError) as e:
        print(f"tagflow: error: {e}", file=sys.stderr)
        return 2
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s level=%(levelname)s logger=%(name)s %(message)s",
        stream=sys.stderr,
    )
    if cfg.socket_mode and not Path(cfg.peers).is_file():
        print(f"tagflow: error: peers file {cfg.peers} not found", file=sys.stderr)
        return 2
    if cfg.topology is not None and not Path(cfg.topology).is_file():
        print(f"tagflow: error: topology file {cfg.topology} not found", file=sys.stderr)
        return 2
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        cfg.save(out)
        if cfg.st_search:
            return run_st_search(cfg, out)
        if cfg.socket_mode:
            return run_socket_rank(cfg, out)
        return run_in_process(cfg, out)
    except ConfigError as e:
        print(f"tagflow: error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        log.error("event=run_failed error_type=%s error=%r", type(e).__name__, str(e))
        return 1


if __name__ == "__main__":
    sys.exit(main())
