"""Print a lifelong summary.csv as a phase table (mean, std, p-value).

    python3 scripts/phase_table.py results/hri_reduced [--per-step H]
"""
import argparse
import csv
from pathlib import Path


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("run_dir", type=Path)
    ap.add_argument("--per-step", type=float, default=1.0, help="divide rewards by this task length")
    args = ap.parse_args()
    rows = list(csv.DictReader(open(args.run_dir / "summary.csv")))
    h = args.per_step
    print(f"{'metric':16s} {'algorithm':10s} {'mean':>10s} {'std':>10s} {'n':>4s} {'p':>10s}")
    for r in rows:
        print(f"{r['metric']:16s} {r['algorithm']:10s} {float(r['mean']) / h:10.4f} "
              f"{float(r['std']) / h:10.4f} {r['n']:>4s} {r['p_value'] or '-':>10s}")


if __name__ == "__main__":
    main()
