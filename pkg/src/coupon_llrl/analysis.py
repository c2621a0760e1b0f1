"""Smoothing, rank tests and per-phase summaries."""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.special import comb, ndtr
from scipy.stats import rankdata


def smooth_series(xs: Sequence[float], window: int) -> np.ndarray:
    """Trailing running mean; the first window-1 entries average what exists so far."""
    if window < 1:
        raise ValueError("window must be >= 1")
    xs = np.asarray(xs, dtype=float)
    if xs.size == 0:
        return xs
    c = np.concatenate([[0.0], np.cumsum(xs)])
    i = np.arange(1, xs.size + 1)
    lo = np.maximum(0, i - window)
    return (c[i] - c[lo]) / (i - lo)


def mann_whitney_u(x: Sequence[float], y: Sequence[float],
                   exact_limit: int = 1_000_000) -> tuple[float, float]:
    """(U_x, two-sided p). U_x counts pairs with x > y, ties as one half.

    Normal approximation with tie correction when both samples have at least
    8 points; otherwise exact permutation of the midranks when the number of
    splits is at most exact_limit.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    nx, ny = len(x), len(y)
    if nx == 0 or ny == 0:
        raise ValueError("both samples must be non-empty")
    ranks = rankdata(np.concatenate([x, y]))
    u = float(ranks[:nx].sum() - nx * (nx + 1) / 2)
    mean = nx * ny / 2
    if min(nx, ny) < 8 and comb(nx + ny, nx, exact=True) <= exact_limit:
        return u, _exact_p(ranks, nx, u, mean)
    n = nx + ny
    _, t = np.unique(ranks, return_counts=True)
    var = nx * ny / 12 * ((n + 1) - (t ** 3 - t).sum() / (n * (n - 1)))
    if var <= 0:
        return u, 1.0
    z = (abs(u - mean) - 0.5) / math.sqrt(var)  # continuity correction
    return u, float(min(1.0, 2 * ndtr(-max(z, 0.0))))


def _exact_p(ranks: np.ndarray, nx: int, u: float, mean: float) -> float:
    n = len(ranks)
    dev = abs(u - mean)
    hits = total = 0
    offset = nx * (nx + 1) / 2
    for idx in itertools.combinations(range(n), nx):
        ui = ranks[list(idx)].sum() - offset
        hits += abs(ui - mean) >= dev - 1e-9
        total += 1
    return hits / total


@dataclass(frozen=True)
class SummaryRow:
    algorithm: str
    metric: str
    mean: float
    std: float
    n: int
    p_value: float | None = None

    def __post_init__(self):
        if self.n < 1 or self.std < 0:
            raise ValueError("need n >= 1 and std >= 0")


SUMMARY_HEADER = ["algorithm", "metric", "mean", "std", "n", "p_value"]


def phase_slices(n_tasks: int, boundaries: Sequence[int]) -> dict[str, slice]:
    """Phase name -> task slice. boundaries are the last task of each phase but the final one."""
    edges = [0, *boundaries, n_tasks]
    out = {}
    for k in range(len(edges) - 1):
        if edges[k + 1] > edges[k]:
            out[f"phase{k + 1}"] = slice(edges[k], edges[k + 1])
    out["overall"] = slice(0, n_tasks)
    return out


def summarize(rewards: Mapping[str, np.ndarray], boundaries: Sequence[int] = ()) -> list[SummaryRow]:
    """rewards: algorithm -> (runs, tasks) per-task rewards.

    Per phase, each run contributes its mean per-task reward; rows report
    mean and sample std across runs. With exactly two algorithms the second
    row of each phase carries the Mann-Whitney p-value against the first.
    """
    algos = list(rewards)
    n_tasks = np.asarray(rewards[algos[0]]).shape[1]
    rows = []
    for phase, sl in phase_slices(n_tasks, boundaries).items():
        per_run = {a: np.asarray(rewards[a], dtype=float)[:, sl].mean(axis=1) for a in algos}
        for k, a in enumerate(algos):
            v = per_run[a]
            p = None
            if k > 0 and len(algos) == 2:
                p = mann_whitney_u(v, per_run[algos[0]])[1]
            std = float(v.std(ddof=1)) if len(v) > 1 else 0.0
            rows.append(SummaryRow(a, f"reward_{phase}", float(v.mean()), std, len(v), p))
    return rows


def write_summary_csv(rows: Sequence[SummaryRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_HEADER)
        for r in rows:
            w.writerow([r.algorithm, r.metric, f"{r.mean:.12g}", f"{r.std:.12g}", r.n,
                        "" if r.p_value is None else f"{r.p_value:.6g}"])
