#!/usr/bin/env python3
"""Measure query-time scaling of each engine against database size.

Fits the log-log slope of median query latency over a size sweep and prints
it next to the engine's theoretical exponent.  Database construction and
query preparation stay outside the timed region.

Usage:
    python scripts/run_complexity_bench.py
    python scripts/run_complexity_bench.py --engines yottixel,hshr --sizes 50,100,200,400
    python scripts/run_complexity_bench.py --reps 5 --out timings.csv
"""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from wsisearch.bench import BenchSpec, bench_engines, format_report
from wsisearch.experiment import ENGINE_MODULES


def parse_args() -> argparse.Namespace:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--engines", default="all", help="comma list or 'all'")
    ap.add_argument("--sizes", default="50,100,200,400", help="database sizes to sweep")
    ap.add_argument("--reps", type=int, default=3)
    ap.add_argument("--queries", type=int, default=3)
    ap.add_argument("--patches", type=int, default=40)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, help="also write timings as CSV")
    return ap.parse_args()


def main() -> int:
    args = parse_args()
    engines = sorted(ENGINE_MODULES) if args.engines == "all" else args.engines.split(",")
    spec = BenchSpec(
        sizes=tuple(int(s) for s in args.sizes.split(",")),
        repetitions=args.reps,
        queries=args.queries,
        patches_per_slide=args.patches,
        dim=args.dim,
        seed=args.seed,
    )
    results = bench_engines(engines, spec)
    print(format_report(results))

    if args.out:
        with args.out.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["engine", "size", "median_s", "slope", "theory"])
            for res in results:
                for size, med in zip(res.sizes, res.median_seconds):
                    writer.writerow(
                        [res.engine, size, f"{med:.9f}", f"{res.slope:.4f}", f"{res.theory:.1f}"]
                    )
        print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
