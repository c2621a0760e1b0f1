"""Batch experiment runner.

    coupon-llrl occ run|bounds|lowerbound --config cfg.json --out DIR
    coupon-llrl llrl run --config cfg.json --out DIR
    coupon-llrl env describe --config cfg.json --out DIR
    coupon-llrl sweep --config cfg.json --out DIR

Exit codes: 0 success, 2 config error, 3 runtime failure. Seeds fan out to a
process pool sized by the config's `parallelism` or COUPON_LLRL_PARALLELISM;
results are merged in seed order so output never depends on the pool size.
"""
from __future__ import annotations

import argparse
import copy
import csv
import itertools
import json
import logging
import math
import os
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from functools import partial
from pathlib import Path

import numpy as np

from . import envs
from .analysis import SummaryRow, mann_whitney_u, smooth_series, summarize, write_summary_csv
from .collectors import (ExpFirst, Expected, ForcedExp, HighProb, Oracle, expfirst_probe_budget,
                         forcedexp_bounds, prop1_bounds, write_bounds_csv)
from .lifelong import (EXPFIRST, FORCED, LlrlConfig, run_lifelong, run_rmax_tasks, write_lifelong_csv)
from .mdp import diameter, mdp_to_dict
from .occp import LossMatrix, Scripted, Stochastic, hard_instance, play_game, regret_of_log, write_game_csv

log = logging.getLogger("coupon_llrl")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
EXPERIMENTS = ("occ_run", "occ_bounds", "occ_lowerbound", "llrl_run", "env_describe", "sweep")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    experiment: str
    params: dict = field(default_factory=dict)
    seeds: list[int] = field(default_factory=lambda: [0])
    parallelism: int = 1

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment: expected one of {EXPERIMENTS}, got {self.experiment!r}")
        if not self.seeds:
            raise ConfigError("seeds: must be non-empty")
        if self.parallelism < 1:
            raise ConfigError("parallelism: must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown top-level field(s): {sorted(extra)}")
        if "experiment" not in d:
            raise ConfigError("experiment: missing")
        d = dict(d)
        if "seeds" in d:
            d["seeds"] = _seed_list(d["seeds"])
        return cls(**d)


def _seed_list(spec) -> list[int]:
    """A list of ints, or {"start": a, "count": n}."""
    if isinstance(spec, dict):
        try:
            return list(range(int(spec.get("start", 0)), int(spec.get("start", 0)) + int(spec["count"])))
        except (KeyError, TypeError, ValueError):
            raise ConfigError("seeds: expected a list or {start, count}") from None
    if not isinstance(spec, list) or not all(isinstance(s, int) for s in spec):
        raise ConfigError("seeds: expected a list of integers")
    return spec


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return ExperimentConfig.from_dict(d)


def worker_count(cfg: ExperimentConfig) -> int:
    env = os.environ.get("COUPON_LLRL_PARALLELISM")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"COUPON_LLRL_PARALLELISM must be an integer, got {env!r}") from None
    return cfg.parallelism


def _map_seeds(fn, seeds, workers):
    if workers <= 1 or len(seeds) <= 1:
        return [fn(s) for s in seeds]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, seeds))  # map preserves seed order


def _get(params: dict, key: str, default=None, kind=None, section=""):
    where = f"{section}.{key}" if section else key
    if key not in params:
        if default is None:
            raise ConfigError(f"params.{where}: missing")
        return default
    val = params[key]
    if kind is not None:
        try:
            val = kind(val)
        except (TypeError, ValueError):
            raise ConfigError(f"params.{where}: cannot read {val!r} as {kind.__name__}") from None
    return val


# ---------------------------------------------------------------------------
# OCCP experiments

def _matrix(params) -> LossMatrix:
    try:
        return LossMatrix(*params.get("rho", (0, 1, 1, 2)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"params.rho: {exc}") from None


def _occ_env(spec: dict, T: int):
    kind = spec.get("kind")
    try:
        if kind == "stochastic":
            return Stochastic(tuple(spec["mu"]))
        if kind == "hard_instance":
            return hard_instance(T, int(spec["C"]))
        if kind == "scripted":
            return Scripted(tuple(spec["sequence"]))
    except KeyError as exc:
        raise ConfigError(f"params.env.{exc.args[0]}: missing") from None
    except ValueError as exc:
        raise ConfigError(f"params.env: {exc}") from None
    raise ConfigError(f"params.env.kind: expected stochastic, hard_instance or scripted, got {kind!r}")


def _collector(spec: dict, T: int, matrix: LossMatrix):
    name = spec.get("name")
    if name == "forcedexp":
        return f"forcedexp_a{spec.get('alpha', 0.5)}", ForcedExp(float(spec.get("alpha", 0.5)))
    if name == "expfirst":
        if "E" in spec:
            E = int(spec["E"])
        elif "mu_m" in spec:
            mode = HighProb(spec["delta"]) if "delta" in spec else Expected(T, matrix)
            E = expfirst_probe_budget(float(spec["mu_m"]), mode)
        else:
            raise ConfigError("params.collectors[expfirst]: needs E or mu_m")
        return f"expfirst_E{E}", ExpFirst(E)
    if name == "oracle":
        return "oracle", Oracle()
    raise ConfigError(f"params.collectors.name: unknown collector {name!r}")


def _occ_seed(seed, env, collector, T, matrix, keep_log):
    g = play_game(env, collector, T, seed=seed, matrix=matrix)
    return g.cumulative_regret(), (g if keep_log else None)


def occ_run(cfg: ExperimentConfig, out: Path, workers: int) -> None:
    p = cfg.params
    T = _get(p, "T", kind=int)
    matrix = _matrix(p)
    env = _occ_env(_get(p, "env"), T)
    rows = []
    finals = {}
    for spec in _get(p, "collectors", [{"name": "forcedexp", "alpha": 0.5}]):
        name, col = _collector(spec, T, matrix)
        res = _map_seeds(partial(_occ_seed, env=env, collector=col, T=T, matrix=matrix,
                                 keep_log=bool(p.get("write_games", False))), cfg.seeds, workers)
        curves = np.array([r[0] for r in res])
        if p.get("write_games", False):
            write_game_csv([r[1] for r in res], out / f"games_{name}.csv")
        stride = max(1, int(p.get("curve_stride", 1)))
        idx = np.unique(np.r_[np.arange(stride - 1, T, stride), T - 1])
        with open(out / f"regret_{name}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "mean_regret", "std_regret", "n"])
            sd = curves.std(axis=0, ddof=1) if len(curves) > 1 else np.zeros(T)
            for i in idx:
                w.writerow([i + 1, f"{curves[:, i].mean():.9g}", f"{sd[i]:.9g}", len(curves)])
        finals[name] = curves[:, -1]
    names = list(finals)
    for k, n in enumerate(names):
        v = finals[n]
        pval = mann_whitney_u(v, finals[names[0]])[1] if k > 0 and len(names) == 2 else None
        rows.append(SummaryRow(n, "final_regret", float(v.mean()),
                               float(v.std(ddof=1)) if len(v) > 1 else 0.0, len(v), pval))
    write_summary_csv(rows, out / "summary.csv")


def occ_bounds(cfg: ExperimentConfig, out: Path, workers: int) -> None:
    p = cfg.params
    matrix = _matrix(p)
    rows = []
    for k, spec in enumerate(_get(p, "rows")):
        missing = {"T", "delta", "alpha" if spec.get("algo") == "forcedexp" else "mu_m"} - set(spec)
        if spec.get("algo") == "forcedexp":
            missing |= {"c_star"} - set(spec)
        if missing:
            raise ConfigError(f"params.rows[{k}]: missing {sorted(missing)}")
        algo, T, delta = spec.get("algo"), int(spec["T"]), float(spec["delta"])
        if algo == "forcedexp":
            rows.append((algo, T, spec["alpha"], delta,
                         forcedexp_bounds(int(spec["c_star"]), matrix, T, float(spec["alpha"]), delta)))
        elif algo == "expfirst":
            E = expfirst_probe_budget(float(spec["mu_m"]), HighProb(delta))
            rows.append((algo, T, E, delta, prop1_bounds(float(spec["mu_m"]), matrix, T, delta)))
        else:
            raise ConfigError(f"params.rows.algo: expected forcedexp or expfirst, got {algo!r}")
    write_bounds_csv(rows, out / "bounds.csv")


def _hard_seed(seed, T, C, alpha, matrix):
    return regret_of_log(play_game(hard_instance(T, C), ForcedExp(alpha), T, seed=seed, matrix=matrix))


def occ_lowerbound(cfg: ExperimentConfig, out: Path, workers: int) -> None:
    p = cfg.params
    Ts = [int(t) for t in _get(p, "T_values", [100, 1000, 10000, 100000])]
    C, alpha = int(p.get("C", 4)), float(p.get("alpha", 0.5))
    matrix = _matrix(p)
    means = []
    with open(out / "lowerbound.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["T", "mean_regret", "std_regret", "n"])
        for T in Ts:
            r = np.array(_map_seeds(partial(_hard_seed, T=T, C=C, alpha=alpha, matrix=matrix), cfg.seeds, workers))
            means.append(r.mean())
            w.writerow([T, f"{r.mean():.9g}", f"{r.std(ddof=1) if len(r) > 1 else 0.0:.9g}", len(r)])
    slope = float(np.polyfit(np.log(Ts), np.log(means), 1)[0]) if len(Ts) > 1 else math.nan
    write_summary_csv([SummaryRow(f"forcedexp_a{alpha}", "loglog_slope", slope, 0.0, len(Ts))],
                      out / "summary.csv")


# ---------------------------------------------------------------------------
# Lifelong experiments

def _family(params):
    spec = params.get("env", {"kind": "gridworld"})
    kind = spec.get("kind")
    if kind == "gridworld":
        return envs.gridworld_family(), None
    if kind == "hri":
        models, schedule = envs.hri_analog(tuple(spec.get("dims", envs.HRI_DIMS)),
                                           float(spec.get("noise_sd", 0.01)), int(spec.get("seed", 0)))
        return {i + 1: m for i, m in enumerate(models)}, schedule
    raise ConfigError(f"params.env.kind: expected gridworld or hri, got {kind!r}")


def _llrl_cfg(params, rule, E) -> LlrlConfig:
    raw = dict(params.get("llrl", {}))
    names = {f.name for f in fields(LlrlConfig)}
    bad = set(raw) - names
    if bad:
        raise ConfigError(f"params.llrl: unknown field(s) {sorted(bad)}")
    raw.update(probe_rule=rule, E=E)
    try:
        return LlrlConfig(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"params.llrl: {exc}") from None


def _llrl_seed(seed, algo, schedule, family, cfg, n_tasks):
    if algo == "rmax":
        return run_rmax_tasks(schedule, family, cfg, n_tasks, seed)
    return run_lifelong(schedule, family, cfg, n_tasks, seed)


def llrl_run(cfg: ExperimentConfig, out: Path, workers: int) -> None:
    p = cfg.params
    family, default_schedule = _family(p)
    n_tasks = _get(p, "tasks", kind=int)
    if "schedule" in p:
        try:
            schedule = envs.schedule_from_dict(p["schedule"])
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"params.schedule: {exc}") from None
    elif default_schedule is not None:
        schedule = default_schedule
    else:
        raise ConfigError("params.schedule: missing")
    E = int(p.get("E", 0))
    window = int(p.get("smooth_window", 10))
    rewards = {}
    for algo in _get(p, "algorithms", [FORCED, EXPFIRST]):
        if algo not in (FORCED, EXPFIRST, "rmax"):
            raise ConfigError(f"params.algorithms: unknown algorithm {algo!r}")
        lcfg = _llrl_cfg(p, EXPFIRST if algo == EXPFIRST else FORCED, E)
        logs = _map_seeds(partial(_llrl_seed, algo=algo, schedule=schedule, family=family,
                                  cfg=lcfg, n_tasks=n_tasks), cfg.seeds, workers)
        write_lifelong_csv(logs, out / f"tasks_{algo}.csv")
        R = np.array([lg.rewards for lg in logs])
        rewards[algo] = R
        with open(out / f"curve_{algo}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["task", "mean_smoothed_reward", "std_error"])
            sm = np.array([smooth_series(r, window) for r in R])
            se = sm.std(axis=0, ddof=1) / math.sqrt(len(sm)) if len(sm) > 1 else np.zeros(n_tasks)
            for t in range(n_tasks):
                w.writerow([t + 1, f"{sm[:, t].mean():.9g}", f"{se[t]:.9g}"])
    boundaries = [int(b) for b in p.get("phase_boundaries", [E] if E else [])]
    write_summary_csv(summarize(rewards, boundaries), out / "summary.csv")


def env_describe(cfg: ExperimentConfig, out: Path, workers: int) -> None:
    p = cfg.params
    kind = p.get("kind", "gridworld")
    if kind == "gridworld":
        mdp = envs.build_gridworld(int(_get(p, "variant", kind=int)))
        labels = envs.STATE_LABELS
    elif kind == "hri":
        models, _ = envs.hri_analog(tuple(p.get("dims", envs.HRI_DIMS)))
        mdp = models[int(p.get("variant", 1)) - 1]
        labels = None
    else:
        raise ConfigError(f"params.kind: expected gridworld or hri, got {kind!r}")
    info = envs.describe(mdp, labels)
    if p.get("diameter", kind == "gridworld"):
        info["diameter"] = diameter(mdp)
    print(json.dumps(info, indent=2))
    with open(out / "describe.json", "w") as fh:
        json.dump(info, fh, indent=2)
    with open(out / "mdp.json", "w") as fh:
        json.dump(mdp_to_dict(mdp), fh)


def sweep(cfg: ExperimentConfig, out: Path, workers: int) -> None:
    """params: {"base": experiment config, "grid": {"dotted.key": [values]}}."""
    p = cfg.params
    base = _get(p, "base")
    grid = _get(p, "grid")
    keys = list(grid)
    for i, combo in enumerate(itertools.product(*(grid[k] for k in keys))):
        sub = copy.deepcopy(base)
        sub.setdefault("seeds", cfg.seeds)
        for k, v in zip(keys, combo):
            node = sub
            *path, leaf = k.split(".")
            for part in path:
                node = node.setdefault(part, {})
            node[leaf] = v
        sub_cfg = ExperimentConfig.from_dict(sub)
        if sub_cfg.experiment == "sweep":
            raise ConfigError("params.base.experiment: sweeps cannot nest")
        d = out / f"run{i:03d}"
        d.mkdir(parents=True, exist_ok=True)
        with open(d / "config.json", "w") as fh:
            json.dump(sub, fh, indent=2)
        RUNNERS[sub_cfg.experiment](sub_cfg, d, workers)


RUNNERS = {
    "occ_run": occ_run, "occ_bounds": occ_bounds, "occ_lowerbound": occ_lowerbound,
    "llrl_run": llrl_run, "env_describe": env_describe, "sweep": sweep,
}


def run_experiment(cfg: ExperimentConfig, out) -> list[Path]:
    """Run and return the files written. On failure the partial output is removed."""
    out = Path(out)
    fresh = not out.exists()
    out.mkdir(parents=True, exist_ok=True)
    before = set(out.rglob("*"))
    try:
        RUNNERS[cfg.experiment](cfg, out, worker_count(cfg))
    except BaseException:
        for f in sorted(set(out.rglob("*")) - before, reverse=True):
            f.unlink() if f.is_file() else f.rmdir()
        if fresh:
            shutil.rmtree(out, ignore_errors=True)
        raise
    return sorted(f for f in set(out.rglob("*")) - before if f.is_file())


# ---------------------------------------------------------------------------

COMMANDS = {("occ", "run"): "occ_run", ("occ", "bounds"): "occ_bounds",
            ("occ", "lowerbound"): "occ_lowerbound", ("llrl", "run"): "llrl_run",
            ("env", "describe"): "env_describe"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coupon-llrl", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    groups = parser.add_subparsers(dest="group", required=True)

    def add_io(p):
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--out", required=True, help="output directory")

    for group, actions in (("occ", ("run", "bounds", "lowerbound")), ("llrl", ("run",)), ("env", ("describe",))):
        g = groups.add_parser(group).add_subparsers(dest="action", required=True)
        for a in actions:
            add_io(g.add_parser(a))
    add_io(groups.add_parser("sweep"))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    expected = "sweep" if args.group == "sweep" else COMMANDS[(args.group, args.action)]
    try:
        cfg = load_config(args.config)
        if cfg.experiment != expected:
            raise ConfigError(f"experiment: config says {cfg.experiment!r} but command runs {expected!r}")
        files = run_experiment(cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for f in files:
        log.info("wrote %s", f)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
