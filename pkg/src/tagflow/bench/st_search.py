"""Sustainable-throughput search: raise the input rate until latency jumps."""
from __future__ import annotations

import csv
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from ..core import ConfigError


@dataclass
class STSearchConfig:
    start_rate: float = 1000
    rate_step: float = 1000
    run_duration_s: float = 20.0
    baseline_runs: int = 3
    backpressure_factor: float = 4.0
    max_rate: float | None = None
    rates: Sequence[float] | None = None  # explicit schedule, overrides start/step/max

    def __post_init__(self):
        if self.rate_step <= 0:
            raise ConfigError("rate_step must be positive")
        if self.backpressure_factor <= 1:
            raise ConfigError("backpressure_factor must exceed 1")
        if self.baseline_runs < 1:
            raise ConfigError("baseline_runs must be >= 1")

    def schedule(self) -> list[float]:
        if self.rates is not None:
            return list(self.rates)
        top = self.max_rate if self.max_rate is not None else self.start_rate + 20 * self.rate_step
        out = []
        r = self.start_rate
        while r <= top + 1e-9:
            out.append(r)
            r += self.rate_step
        return out


@dataclass
class STRow:
    rate: float
    mean_latency_ms: float
    windows_processed: int | None
    backpressure: bool
    reason: str = ""


@dataclass
class STReport:
    sustainable_rate: float | None  # None: back-pressure already at the first rate
    baseline_latency_ms: float | None
    rows: list[STRow] = field(default_factory=list)
    exhausted: bool = False

    @property
    def below_start(self) -> bool:
        return self.sustainable_rate is None

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["rate", "mean_latency_ms", "windows_processed", "backpressure", "reason"])
            for r in self.rows:
                w.writerow([r.rate, r.mean_latency_ms, "" if r.windows_processed is None else r.windows_processed,
                            int(r.backpressure), r.reason])


def _unpack(result) -> tuple[float, int | None, int | None, bool]:
    if isinstance(result, (int, float)):
        return float(result), None, None, False
    return (
        float(result.mean_latency_ms),
        getattr(result, "windows_processed", None),
        getattr(result, "expected_windows", None),
        bool(getattr(result, "generator_starved", False)),
    )


def find_sustainable_throughput(run: Callable[[float], object], config: STSearchConfig) -> STReport:
    """Run ``run(rate)`` at increasing rates and return the last rate before back-pressure.

    ``run`` returns either a mean latency in ms or an object with
    ``mean_latency_ms`` and optionally ``windows_processed``/``expected_windows``
    and ``generator_starved``. A rate shows back-pressure when its mean latency
    exceeds ``backpressure_factor`` times the baseline (mean of the first
    ``baseline_runs`` rates; while those are still being collected, the mean
    of the ones so far), when fewer windows than expected were processed, or
    when the generator could not keep its rate.
    """
    rows: list[STRow] = []
    baseline_lat: list[float] = []
    last_ok: float | None = None
    for rate in config.schedule():
        lat, windows, expected, starved = _unpack(run(rate))
        reason = ""
        ref = statistics.fmean(baseline_lat) if baseline_lat else None
        if ref is not None and lat > config.backpressure_factor * ref:
            reason = f"latency {lat:.0f} > {config.backpressure_factor} x {ref:.0f}"
        elif expected is not None and windows is not None and windows < expected:
            reason = f"windows {windows} < {expected}"
        elif starved:
            reason = "generator starved"
        rows.append(STRow(rate, lat, windows, bool(reason), reason))
        if reason:
            base = statistics.fmean(baseline_lat) if baseline_lat else None
            return STReport(last_ok, base, rows)
        if len(baseline_lat) < config.baseline_runs:
            baseline_lat.append(lat)
        last_ok = rate
    base = statistics.fmean(baseline_lat) if baseline_lat else None
    return STReport(last_ok, base, rows, exhausted=True)
