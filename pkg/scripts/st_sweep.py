"""Sustainable-throughput sweep for one workload over a few world sizes.

Example:
    python scripts/st_sweep.py --workload ysb --world-sizes 1 2 --start 5000 --step 5000 --max 60000
"""
from __future__ import annotations

import argparse
import csv
import logging
from pathlib import Path

from tagflow.bench.generator import GeneratorConfig
from tagflow.bench.harness import rate_runner
from tagflow.bench.st_search import STSearchConfig, find_sustainable_throughput
from tagflow.bench.workloads import WORKLOADS


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--workload", choices=WORKLOADS, default="ysb")
    ap.add_argument("--world-sizes", type=int, nargs="+", default=[1, 2])
    ap.add_argument("--pipelining", action="store_true")
    ap.add_argument("--start", type=float, default=5000)
    ap.add_argument("--step", type=float, default=5000)
    ap.add_argument("--max", type=float, default=60000)
    ap.add_argument("--run-duration", type=float, default=20.0)
    ap.add_argument("--window-ms", type=int, default=5000)
    ap.add_argument("--factor", type=float, default=4.0)
    ap.add_argument("--out", default="results/st_sweep")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = STSearchConfig(args.start, args.step, args.run_duration, backpressure_factor=args.factor, max_rate=args.max)
    base = GeneratorConfig(duration_s=args.run_duration, paced=True)
    rows = []
    for ws in args.world_sizes:
        run = rate_runner(args.workload, base, ws, args.window_ms, args.pipelining, timeout=args.run_duration * 20)
        rep = find_sustainable_throughput(run, cfg)
        rep.write_csv(out / f"{args.workload}_ws{ws}_{'pipe' if args.pipelining else 'nopipe'}.csv")
        st = "below_start" if rep.below_start else rep.sustainable_rate
        print(f"{args.workload} world_size={ws} pipelining={args.pipelining}: ST={st} "
              f"baseline={rep.baseline_latency_ms} ms exhausted={rep.exhausted}")
        rows.append([args.workload, ws, int(args.pipelining), st, rep.baseline_latency_ms, int(rep.exhausted)])
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["workload", "world_size", "pipelining", "sustainable_rate", "baseline_latency_ms", "exhausted"])
        w.writerows(rows)


if __name__ == "__main__":
    main()
