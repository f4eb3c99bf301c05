"""Lines evaluated per second against lines per ray, for both backends.

Writes a CSV (one row per sweep point and backend) plus the gnuplot script
next to it, ready for ``gnuplot throughput.gp``.

    python3 scripts/throughput_sweep.py [--sweep 2^10..2^20] [--rays 100] [--out results/]
"""

import argparse
import os
import shutil
import sys
from pathlib import Path

from lblrad import bench


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--sweep", default="2^10..2^20")
    ap.add_argument("--rays", type=int, default=100)
    ap.add_argument("--reps", type=int, default=5)
    ap.add_argument("--grid-points", type=int, default=bench.GRID_POINTS)
    ap.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--out", default="results")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pts = []
    for n in bench.parse_sweep(args.sweep):
        for b in bench.BACKENDS:
            p = bench.run_point(n, b, rays=args.rays, threads=args.threads, reps=args.reps,
                                grid_points=args.grid_points)
            print(f"{n:>9d} {b:>13s} {p.lines_per_second:12.4g} lines/s  {p.status}", flush=True)
            pts.append(p)
    (out / "throughput.csv").write_text(bench.render_csv(pts))
    shutil.copy(Path(__file__).with_name("throughput.gp"), out / "throughput.gp")
    print(f"wrote {out / 'throughput.csv'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
