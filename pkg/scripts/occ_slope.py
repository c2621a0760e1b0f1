"""Log-log slope of mean ForcedExp regret on the hard instance.

    python3 scripts/occ_slope.py results/occ_lowerbound
"""
import argparse
import csv
from pathlib import Path

import numpy as np


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("run_dir", type=Path)
    args = ap.parse_args()
    rows = list(csv.DictReader(open(args.run_dir / "lowerbound.csv")))
    T = np.array([float(r["T"]) for r in rows])
    m = np.array([float(r["mean_regret"]) for r in rows])
    for t, v, r in zip(T, m, rows):
        print(f"T={int(t):>7d}  mean regret {v:10.2f}  std {float(r['std_regret']):8.2f}  regret/sqrt(T) {v / np.sqrt(t):.3f}")
    print(f"slope {np.polyfit(np.log(T), np.log(m), 1)[0]:.3f}")


if __name__ == "__main__":
    main()
