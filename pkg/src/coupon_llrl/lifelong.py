"""The lifelong loop: per task, either probe (explore fully and classify) or
exploit the library with Finite-Model-RL, plus mistake accounting."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .discovery import (ModelEstimate, ModelLibrary, RadiusMeta, Verdict,
                        classify_model, merge_into_library)
from .envs import TaskSchedule, sample_task
from .explore import run_pac_explore
from .fmrl import EXPLOIT, _greedy_policy, _Runner, run_fmrl, single_task_rmax
from .mdp import FiniteMdp, MistakeMeter, max_support

FORCED = "forced"
EXPFIRST = "expfirst"


@dataclass(frozen=True)
class LlrlConfig:
    alpha: float = 0.5
    m: int = 119  # known threshold
    L: int = 76  # escape horizon, 3D on the gridworld
    H: int = 2000  # steps per task
    epsilon: float = 0.1
    delta: float = 0.05
    gamma_sep: float = 0.75
    diameter_bound: float = 25.1
    n_elim: int | None = None  # defaults to m
    delta_pair: float | None = 0.05
    reward_scale: float = 1.0
    merge_samples: bool = True
    probe_rule: str = FORCED
    E: int = 0  # ExpFirst probing length
    count_mistakes: bool = False
    record_traces: bool = False

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.H < 1 or self.m < 1 or self.L < 1:
            raise ValueError("H, m and L must be >= 1")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.probe_rule not in (FORCED, EXPFIRST):
            raise ValueError(f"probe_rule must be {FORCED!r} or {EXPFIRST!r}")

    @property
    def elim(self) -> int:
        return self.m if self.n_elim is None else self.n_elim

    def meta(self, S: int, A: int, N: int, T: int) -> RadiusMeta:
        return RadiusMeta(S, A, N, T, self.delta, self.delta_pair, self.reward_scale)


@dataclass
class TaskRecord:
    task: int
    true_model: int
    probed: bool
    classified: str  # New / Match(i) / Ambiguous(i;j) / Incomplete / "" when exploiting
    model_id: int | None  # library id used or created
    reward: float
    mistakes: int | None
    steps: int
    fallback: bool = False


@dataclass
class LifelongLog:
    seed: int
    records: list[TaskRecord] = field(default_factory=list)
    library: ModelLibrary | None = None
    library_sizes: list[int] = field(default_factory=list)

    @property
    def rewards(self) -> np.ndarray:
        return np.array([r.reward for r in self.records])

    @property
    def total_mistakes(self) -> int:
        return int(sum(r.mistakes or 0 for r in self.records))

    def to_rows(self):
        for r in self.records:
            yield [self.seed, r.task, int(r.probed), r.classified,
                   "" if r.model_id is None else r.model_id, f"{r.reward:.9g}",
                   "" if r.mistakes is None else r.mistakes, r.steps]


LOG_HEADER = ["seed", "task", "probed", "classified", "model_id", "reward", "mistakes", "steps"]


def write_lifelong_csv(logs, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_HEADER)
        for log in logs:
            w.writerows(log.to_rows())


def lifelong_streams(seed: int) -> tuple[np.random.Generator, ...]:
    """(schedule, probe-decision, agent) generators. Shared across algorithms
    so paired runs see the same task sequence."""
    return tuple(np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))


def draw_tasks(schedule: TaskSchedule, n_tasks: int, seed: int) -> list[int]:
    rng = lifelong_streams(seed)[0]
    return [sample_task(schedule, t, rng) for t in range(1, n_tasks + 1)]


def probe_decision(t: int, cfg: LlrlConfig, xi: float) -> bool:
    if cfg.probe_rule == EXPFIRST:
        return t <= cfg.E
    return xi < t ** (-cfg.alpha)


def run_lifelong(schedule: TaskSchedule, family: Mapping[int, FiniteMdp], cfg: LlrlConfig,
                 n_tasks: int, seed: int) -> LifelongLog:
    """Run n_tasks tasks; family maps schedule ids to true MDPs."""
    mdps = list(family.values())
    S, A = mdps[0].S, mdps[0].A
    gamma = mdps[0].gamma
    meta = cfg.meta(S, A, max_support(mdps), n_tasks)
    tasks = draw_tasks(schedule, n_tasks, seed)
    _, probe_rng, rng = lifelong_streams(seed)
    lib = ModelLibrary()
    log = LifelongLog(seed, library=lib)
    meters = {}
    for t, tid in enumerate(tasks, start=1):
        env = family[tid]
        meter = None
        if cfg.count_mistakes:
            meter = meters.setdefault(tid, MistakeMeter(env, cfg.epsilon))
            base = meter.total
        xi = probe_rng.random()  # drawn every task so both rules share the stream
        if probe_decision(t, cfg, xi):
            rec = _probe_task(env, lib, cfg, meta, rng, meter, gamma)
        else:
            res = run_fmrl(env, lib, cfg.H, rng, n_elim=cfg.elim, meta=meta, gamma_sep=cfg.gamma_sep,
                           gamma=gamma, m_fallback=cfg.m, meter=meter)
            used = min(res.final_candidates) if res.final_candidates else None
            rec = TaskRecord(t, tid, False, "", used, res.reward, None, res.steps, res.failed)
        rec.task, rec.true_model = t, tid
        if meter is not None:
            rec.mistakes = meter.total - base
        log.records.append(rec)
        log.library_sizes.append(len(lib))
    return log


def _probe_task(env, lib, cfg, meta, rng, meter, gamma) -> TaskRecord:
    res = run_pac_explore(env, cfg.m, cfg.L, cfg.H, rng, record_policies=meter is not None)
    tr = res.trajectory
    if meter is not None:
        meter.add_trace(tr.s, tr.policies)
    reward = float(np.sum(tr.r))
    state = res.state
    run = _Runner(env, cfg.H, rng, state, res.final_state, meter, False, steps=state.steps)
    if run.left > 0:
        # remainder of the task: greedy on the empirical model
        policy = _greedy_policy(state.empirical_P(), state.empirical_R(), gamma)
        run.segment(policy, np.zeros((env.S, env.A), dtype=bool), 1, EXPLOIT)
    reward += run.reward
    if not res.complete:
        return TaskRecord(0, 0, True, "Incomplete", None, reward, None, run.steps)
    # counts the greedy remainder too; those samples are as valid as the probe's
    est = ModelEstimate.from_state(state, meta)
    verdict = classify_model(est, lib)
    if verdict.verdict is Verdict.NEW:
        model_id = lib.add(est)
    else:
        model_id = verdict.model_id
        if cfg.merge_samples:
            merge_into_library(lib, model_id, est)
    return TaskRecord(0, 0, True, str(verdict), model_id, reward, None, run.steps)


def run_rmax_tasks(schedule: TaskSchedule, family: Mapping[int, FiniteMdp], cfg: LlrlConfig,
                   n_tasks: int, seed: int) -> LifelongLog:
    """Independent single-task Rmax on the same task sequence (no transfer)."""
    tasks = draw_tasks(schedule, n_tasks, seed)
    rng = lifelong_streams(seed)[2]
    log = LifelongLog(seed)
    meters = {}
    for t, tid in enumerate(tasks, start=1):
        env = family[tid]
        meter = meters.setdefault(tid, MistakeMeter(env, cfg.epsilon)) if cfg.count_mistakes else None
        res = single_task_rmax(env, cfg.m, cfg.epsilon, env.gamma, cfg.H, rng,
                               count_mistakes=cfg.count_mistakes, meter=meter)
        log.records.append(TaskRecord(t, tid, False, "", None, res.reward, res.mistakes, res.steps))
    return log


def count_mistakes(states, policies, mdp: FiniteMdp, epsilon: float) -> int:
    """Steps where V*(s_t) - V^{pi_t}(s_t) > epsilon; policies has shape (K, S)."""
    return MistakeMeter(mdp, epsilon).add_trace(np.asarray(states), np.asarray(policies))


def theorem3_budget(C: int, D_bound: float, gamma_sep: float, H: float, T: int, delta: float) -> float:
    """Mistake budget over T tasks with unit constants: rho0 T + C rho3 sqrt(T) ln(C/delta)."""
    rho0 = C * D_bound / gamma_sep ** 2
    rho3 = H
    return rho0 * T + C * rho3 * math.sqrt(T) * math.log(C / delta)
