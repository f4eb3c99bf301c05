"""Replay the arithmetic probe suite on every preset and write a CSV report.

    python3 scripts/run_probes.py [--samples 8388608] [--out results/probes.csv]
"""

import argparse
import os
import sys
import time
from pathlib import Path

from lblrad import fpmodel as fp
from lblrad import probes


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--samples", type=int, default=probes.RANDOM_SAMPLES)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--out", default="results/probes.csv")
    args = ap.parse_args()

    profiles = [fp.PRESETS[n] for n in fp.GPU_PRESETS + ("IEEE-RN",)]
    t0 = time.perf_counter()
    reports = probes.run_suite(profiles, seed=args.seed, samples=args.samples, threads=args.threads)
    wall = time.perf_counter() - t0

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(probes.render_report(reports))
    for r in reports:
        if r.match is False:
            print(f"MISMATCH {r.probe_id} {r.profile}: expected {r.expected!r}, got {r.observed!r}")
    good = sum(bool(r.match) for r in reports)
    rated = sum(r.match is not None for r in reports)
    print(f"{good}/{rated} rows match in {wall:.1f} s -> {out}")
    return 0 if good == rated else 1


if __name__ == "__main__":
    sys.exit(main())
