"""Run the default comparison and print a per-iteration residual table for all methods.

Usage: python scripts/run_compare.py [--seed N] [--out DIR] [--every K]
"""

import argparse
import csv
from pathlib import Path

from pdap.cli import run_compare
from pdap.experiment import ExperimentConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out", default="runs/compare")
    ap.add_argument("--every", type=int, default=5, help="print every k-th iteration")
    args = ap.parse_args()

    cfg = ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    outcome = run_compare(cfg, args.out, no_timing=True)
    names = list(outcome.report["methods"])

    columns = {}
    for name in names:
        with open(Path(args.out) / name / "metrics.csv", newline="") as fh:
            columns[name] = [float(row["r_j"]) for row in csv.DictReader(fh)]
    n = max(len(c) for c in columns.values())
    print(f"j_bar = {outcome.reference.j_bar:.15g}, reference support {outcome.reference.n_points}")
    print("    k " + "".join(f"{name:>12}" for name in names))
    for k in range(0, n, args.every):
        cells = "".join(f"{columns[m][k]:>12.3e}" if k < len(columns[m]) else f"{'':>12}" for m in names)
        print(f"{k:>5} {cells}")
    for name, s in outcome.report["methods"].items():
        print(f"{name}: {s['status']}, support {s['final_support']}, zeta_residual {s['zeta_residual']:.3f}")
    for name, err in outcome.report["errors"].items():
        print(f"{name}: failed ({err})")


if __name__ == "__main__":
    main()
