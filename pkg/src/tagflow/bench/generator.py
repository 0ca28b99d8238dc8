"""In-memory, rate-controlled ad event generator.

Event content (ad id, user/type value, padding length) depends only on
``(seed, rank, index)``: it is drawn in fixed blocks so pacing jitter never
changes what gets generated, only when.

Two timing modes:

* ``paced=True`` -- token-bucket pacing against the clock; each event is stamped
  with its ingestion wall-clock time.
* ``paced=False`` -- unpaced; event ``i`` of an instance is stamped with its
  scheduled time ``i * 1000 * instances // target_rate``. Fully deterministic,
  used for oracle runs.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Iterator

import numpy as np

from ..core import ConfigError, Event, EVENT_HEADER_SIZE

_BLOCK = 4096
_USER_SPACE = 1 << 40


@dataclass
class GeneratorConfig:
    target_rate: int = 10_000  # events/s summed over all instances
    duration_s: float = 60.0
    avg_event_bytes: int = 136
    num_campaigns: int = 100
    ads_per_campaign: int = 10
    seed: int = 0
    paced: bool = True
    batch_size: int = 1000
    tick_ms: int = 5

    def __post_init__(self):
        if self.target_rate <= 0:
            raise ConfigError("target_rate must be positive")
        if self.duration_s <= 0:
            raise ConfigError("duration_s must be positive")
        if self.avg_event_bytes < EVENT_HEADER_SIZE:
            raise ConfigError(f"avg_event_bytes must be >= {EVENT_HEADER_SIZE}")
        if self.num_campaigns <= 0 or self.ads_per_campaign <= 0:
            raise ConfigError("campaign counts must be positive")

    @property
    def num_ads(self) -> int:
        return self.num_campaigns * self.ads_per_campaign

    @property
    def total_events(self) -> int:
        return int(self.target_rate * self.duration_s)

    def instance_events(self, rank: int, instances: int) -> int:
        total = self.total_events
        return total * (rank + 1) // instances - total * rank // instances

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GeneratorStats:
    emitted: int = 0
    markers: int = 0
    max_backlog: int = 0
    starved_ticks: int = 0
    windows: list[int] = field(default_factory=list)


class EventGenerator:
    def __init__(
        self,
        config: GeneratorConfig,
        rank: int = 0,
        instances: int = 1,
        window_ms: int = 10_000,
        clock=None,
        log: list | None = None,
    ):
        if not 0 <= rank < instances:
            raise ConfigError(f"rank {rank} outside {instances} instances")
        self.config = config
        self.rank = rank
        self.instances = instances
        self.window_ms = window_ms
        self.clock = clock
        self.log = log
        self.count = config.instance_events(rank, instances)
        self.stats = GeneratorStats()
        self._rng = np.random.default_rng([config.seed, rank])
        self._block: tuple[list, list, list] | None = None
        self._block_pos = 0
        pad_max = 2 * (config.avg_event_bytes - EVENT_HEADER_SIZE)
        self._pad_max = pad_max
        self._pads = [bytes(n) for n in range(pad_max + 1)]

    def _draw(self, k: int) -> tuple[list, list, list]:
        keys: list = []
        values: list = []
        pads: list = []
        while k:
            if self._block is None or self._block_pos == _BLOCK:
                rng = self._rng
                ad = rng.integers(0, self.config.num_ads, _BLOCK)
                user = rng.integers(0, _USER_SPACE, _BLOCK)
                typ = rng.integers(0, 3, _BLOCK)
                plen = rng.integers(0, self._pad_max + 1, _BLOCK)
                self._block = (ad.tolist(), (user * 3 + typ).tolist(), plen.tolist())
                self._block_pos = 0
            take = min(k, _BLOCK - self._block_pos)
            a, v, p = self._block
            s = slice(self._block_pos, self._block_pos + take)
            keys += a[s]
            values += v[s]
            pads += p[s]
            self._block_pos += take
            k -= take
        return keys, values, pads

    def _make(self, times, keys, values, pads) -> list[Event]:
        padv = self._pads
        evs = [Event(k, v, t, padv[p]) for k, v, t, p in zip(keys, values, times, pads)]
        if self.log is not None:
            self.log.extend((e.key, e.value, e.event_time) for e in evs)
        return evs

    def scheduled_time(self, i: int) -> int:
        return i * 1000 * self.instances // self.config.target_rate

    def batches(self) -> Iterator[tuple[str, object]]:
        """Yield ``("data", events)`` and ``("marker", window_id)`` items.

        A data batch never spans a window boundary, and the marker for window
        ``w`` is yielded before the first event of any later window.
        """
        if self.config.paced:
            yield from self._paced()
        else:
            yield from self._unpaced()

    def _advance(self, current: int | None, w: int) -> Iterator[tuple[str, object]]:
        if current is not None:
            for m in range(current, w):
                self.stats.markers += 1
                yield ("marker", m)

    def _unpaced(self):
        size = self.window_ms
        cur = None
        i = 0
        n = self.count
        while i < n:
            k = min(self.config.batch_size, n - i)
            w = self.scheduled_time(i) // size
            # shrink the batch so it stays inside window w
            end_t = (w + 1) * size
            j = i + k
            if self.scheduled_time(j - 1) >= end_t:
                lo, hi = i, j - 1
                while lo < hi:
                    mid = (lo + hi) // 2
                    if self.scheduled_time(mid) >= end_t:
                        hi = mid
                    else:
                        lo = mid + 1
                j = lo
            if cur != w:
                yield from self._advance(cur, w)
                cur = w
                self.stats.windows.append(w)
            times = [self.scheduled_time(x) for x in range(i, j)]
            keys, values, pads = self._draw(j - i)
            yield ("data", self._make(times, keys, values, pads))
            self.stats.emitted += j - i
            i = j
        if cur is not None:
            yield from self._advance(cur, cur + 1)

    def _paced(self):
        clock = self.clock
        if clock is None:
            raise ConfigError("paced generation needs a clock")
        size = self.window_ms
        n = self.count
        span_ms = self.config.duration_s * 1000
        start = clock.now_ms()
        if start < size:
            # started just after the clock origin: anchor there so the run covers whole windows
            start = 0
        tick = self.config.tick_ms / 1000
        cur = None
        while self.stats.emitted < n:
            now = clock.now_ms()
            due = min(n, int((now - start) * n // span_ms) + 1)
            backlog = due - self.stats.emitted
            if backlog <= 0:
                time.sleep(tick)
                continue
            if backlog > self.stats.max_backlog:
                self.stats.max_backlog = backlog
            if backlog > self.config.batch_size:
                self.stats.starved_ticks += 1
            k = min(backlog, self.config.batch_size)
            w = now // size
            if cur != w:
                yield from self._advance(cur, w)
                cur = w
                self.stats.windows.append(w)
            keys, values, pads = self._draw(k)
            yield ("data", self._make([now] * k, keys, values, pads))
            self.stats.emitted += k
        if cur is not None:
            yield from self._advance(cur, cur + 1)


def generate(config: GeneratorConfig, rank: int = 0, instances: int = 1, window_ms: int = 10_000, clock=None, log=None):
    """Convenience wrapper returning the item iterator of one generator instance."""
    return EventGenerator(config, rank, instances, window_ms, clock, log).batches()
