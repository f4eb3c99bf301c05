"""Ulp histogram of the transfer program under one profile against IEEE-RN.

    python3 scripts/kernel_ulp_histogram.py [--profile Nvidia-Pixel] [--points 1048576]
"""

import argparse
import csv
import sys
from pathlib import Path

from lblrad import fpmodel as fp
from lblrad.fidelity import ulp_histogram


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--profile", default="Nvidia-Pixel")
    ap.add_argument("--baseline", default="IEEE-RN")
    ap.add_argument("--points", type=int, default=1 << 20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="results/kernel_ulp_histogram.csv")
    args = ap.parse_args()

    h = ulp_histogram(fp.get_profile(args.profile), fp.get_profile(args.baseline),
                      n=args.points, seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("ulp_range", "bin", "count"))
        w.writerows(h.rows())
    width = max(c for _, _, c in h.rows())
    for label, _, c in h.rows():
        print(f"{label:>16s} {c:9d} {'#' * max(1 if c else 0, round(50 * c / width))}")
    print(f"{h.profile} vs {h.baseline}, {h.points} points -> {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
