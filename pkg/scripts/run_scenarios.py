"""Run every scenario in scenarios/ through the CLI and print per-cell power.

    python3 scripts/run_scenarios.py [--out results/runs]
"""

import argparse
import csv
import sys
from pathlib import Path

from lblrad.cli import main as cli

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--out", default="results/runs")
    ap.add_argument("--threads", default="1")
    args = ap.parse_args()
    rc = 0
    for sc in sorted((ROOT / "scenarios").glob("*.ini")):
        out = Path(args.out) / sc.stem
        code = cli(["run", str(sc), "--out", str(out), "--threads", args.threads])
        rc = rc or code
        print(f"== {sc.name} (exit {code})")
        if code == 0:
            for row in csv.DictReader((out / "power.csv").open()):
                print(f"  cell {row['cell']:>3s} T={row['T']:>7s}  {float(row['mean_power']):+.4e}"
                      f" +- {float(row['stderr']):.2e}")
    return rc


if __name__ == "__main__":
    sys.exit(main())
