"""Compare pipelining on/off: result equality, transport sends, and wall time.

Runs each workload unpaced (as fast as the engine drains it) so wall time is
a throughput proxy. Gains are reported, not asserted.

    python scripts/pipelining_compare.py --rate 10000 --duration 60 --world-sizes 1 2 4
"""
from __future__ import annotations

import argparse
import time

from tagflow.bench.generator import GeneratorConfig
from tagflow.bench.harness import run_workload
from tagflow.bench.workloads import WORKLOADS


def rows(records):
    return sorted((r.window_id, r.key, r.value, r.event_time_ms) for r in records)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--workloads", nargs="+", choices=WORKLOADS, default=list(WORKLOADS))
    ap.add_argument("--world-sizes", type=int, nargs="+", default=[1, 2, 4])
    ap.add_argument("--rate", type=int, default=10_000)
    ap.add_argument("--duration", type=float, default=60)
    ap.add_argument("--window-ms", type=int, default=10_000)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    gen = GeneratorConfig(target_rate=args.rate, duration_s=args.duration, paced=False)
    print("workload,world_size,wall_off_s,wall_on_s,speedup_pct,sends_off,sends_on,identical")
    for wl in args.workloads:
        for ws in args.world_sizes:
            wall = {}
            res = {}
            for pipe in (False, True):
                best = float("inf")
                for _ in range(args.repeats):
                    t0 = time.perf_counter()
                    res[pipe] = run_workload(wl, gen, ws, args.window_ms, pipe)
                    best = min(best, time.perf_counter() - t0)
                wall[pipe] = best
            sends = {p: r.run.transports and sum(t.stats.sent for t in r.run.transports) for p, r in res.items()}
            same = rows(res[False].records) == rows(res[True].records)
            gain = 100 * (wall[False] - wall[True]) / wall[False]
            print(f"{wl},{ws},{wall[False]:.2f},{wall[True]:.2f},{gain:.1f},{sends[False]},{sends[True]},{same}")


if __name__ == "__main__":
    main()
