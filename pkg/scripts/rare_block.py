"""Per-seed comparison over the rare-model block of a nonstationary lifelong run.

    python3 scripts/rare_block.py results/gridworld_nonstationary [--start 19 --length 25]
"""
import argparse
import csv
from pathlib import Path

import numpy as np


def task_rewards(path):
    rows = list(csv.DictReader(open(path)))
    seeds = sorted({int(r["seed"]) for r in rows})
    n = max(int(r["task"]) for r in rows)
    R = np.zeros((len(seeds), n))
    for r in rows:
        R[seeds.index(int(r["seed"])), int(r["task"]) - 1] = float(r["reward"])
    return seeds, R


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("run_dir", type=Path)
    ap.add_argument("--start", type=int, default=19, help="first task of the block (1-based)")
    ap.add_argument("--length", type=int, default=25)
    args = ap.parse_args()
    seeds, fx = task_rewards(args.run_dir / "tasks_forced.csv")
    _, ef = task_rewards(args.run_dir / "tasks_expfirst.csv")
    blk = slice(args.start - 1, args.start - 1 + args.length)
    a, b = fx[:, blk].mean(axis=1), ef[:, blk].mean(axis=1)
    print("seed  forced_block  expfirst_block")
    for s, x, y in zip(seeds, a, b):
        print(f"{s:4d}  {x:12.1f}  {y:14.1f}")
    print(f"ForcedExp ahead in {int(np.sum(a > b))}/{len(seeds)} seeds; "
          f"means {a.mean():.1f} vs {b.mean():.1f}")


if __name__ == "__main__":
    main()
