from __future__ import annotations

import csv
import math
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from ..ops.io import WindowResultRecord

SINK_COLUMNS = ("window_id", "key", "value", "event_time_ms", "release_ms", "latency_ms")


@dataclass
class RunSummary:
    rate: float
    mean_latency_ms: float
    p99_latency_ms: float
    windows_processed: int
    events_processed: int
    events_dropped: int
    events_late: int
    median_latency_ms: float = 0.0
    expected_windows: int | None = None
    generator_starved: bool = False

    CSV_COLUMNS = (
        "rate", "mean_latency_ms", "p99_latency_ms", "windows_processed",
        "events_processed", "events_dropped", "events_late",
    )

    def row(self) -> list:
        return [getattr(self, c) for c in self.CSV_COLUMNS]


def percentile(values: list[float], q: float) -> float:
    if not values:
        return 0.0
    s = sorted(values)
    idx = min(len(s) - 1, max(0, math.ceil(q / 100 * len(s)) - 1))  # nearest rank
    return float(s[idx])


def summarize(
    records: list[WindowResultRecord],
    metrics: dict,
    rate: float,
    source_ops: Iterable[int] = (0,),
    expected_windows: int | None = None,
    generator_starved: bool = False,
) -> RunSummary:
    lat = [r.latency_ms for r in records]
    dropped = sum(m.get("dropped", 0) for m in metrics.values())
    late = sum(m.get("late", 0) for m in metrics.values())
    processed = sum(metrics[s].get("events_in", 0) for s in source_ops if s in metrics)
    return RunSummary(
        rate=rate,
        mean_latency_ms=statistics.fmean(lat) if lat else 0.0,
        p99_latency_ms=percentile(lat, 99),
        windows_processed=len(records),
        events_processed=processed,
        events_dropped=dropped,
        events_late=late,
        median_latency_ms=statistics.median(lat) if lat else 0.0,
        expected_windows=expected_windows,
        generator_starved=generator_starved,
    )


def sorted_records(records: Iterable[WindowResultRecord]) -> list[WindowResultRecord]:
    return sorted(records, key=lambda r: (r.window_id, r.key, r.value, r.event_time_ms))


def write_sink_csv(path: str | Path, records: Iterable[WindowResultRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SINK_COLUMNS)
        for r in sorted_records(records):
            w.writerow(r.row())


def read_sink_csv(path: str | Path) -> list[WindowResultRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        WindowResultRecord(int(r["window_id"]), int(r["key"]), int(r["value"]), int(r["event_time_ms"]), int(r["release_ms"]))
        for r in rows
    ]


def write_summary_csv(path: str | Path, summaries: Iterable[RunSummary]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RunSummary.CSV_COLUMNS)
        for s in summaries:
            w.writerow(s.row())


def write_metrics_csv(path: str | Path, metrics: dict, names: dict[int, str] | None = None) -> None:
    keys = sorted({k for m in metrics.values() for k in m})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["op_id", "name", *keys])
        for op_id in sorted(metrics):
            m = metrics[op_id]
            w.writerow([op_id, (names or {}).get(op_id, ""), *[m.get(k, 0) for k in keys]])
