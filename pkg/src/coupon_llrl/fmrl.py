"""Exploitation-path learners.

Finite-Model-RL keeps the library models still consistent with the task's
own data, steers toward state-action pairs where the survivors disagree, and
acts greedily once a single model is left. Single-task Rmax is the
no-transfer baseline and the fallback when every candidate is ruled out.
Both run in segments of a fixed stationary policy through the compiled
rollout, replanning only when a watched pair crosses its count threshold.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .discovery import ModelLibrary, RadiusMeta, confidence_radii
from .explore import ExploreState
from .mdp import FiniteMdp, MistakeMeter

IDENTIFY = "identify"
EXPLOIT = "exploit"
FALLBACK = "fallback"
RMAX = "rmax"


@dataclass
class CandidateSet:
    ids: list[int]
    failed: bool = False

    def __len__(self):
        return len(self.ids)


@dataclass
class FmrlState:
    data: ExploreState  # within-task counts
    candidates: CandidateSet
    n_elim: int
    meta: RadiusMeta

    @classmethod
    def start(cls, lib: ModelLibrary, S: int, A: int, n_elim: int, meta: RadiusMeta) -> "FmrlState":
        return cls(ExploreState.empty(S, A), CandidateSet(list(lib.ids), failed=len(lib) == 0), n_elim, meta)


def eliminate_candidates(state: FmrlState, lib: ModelLibrary) -> CandidateSet:
    """Drop candidates whose library model falls outside the within-task
    confidence region at some pair with at least n_elim visits.

    The library model is itself an estimate, so its own radius is added to
    the within-task one; otherwise long exploit runs shrink the within-task
    region below the library's sampling error and reject the true model.
    """
    d = state.data
    ready = d.counts >= state.n_elim
    if not ready.any() or state.candidates.failed:
        return state.candidates
    ss, aa = np.nonzero(ready)
    n = d.counts[ss, aa]
    eps_T, eps_R = confidence_radii(n, state.meta)
    P_hat = d.trans[ss, aa] / n[:, None]
    R_hat = d.rew_sum[ss, aa] / n
    keep = []
    for i in state.candidates.ids:
        est = lib[i]
        n_lib = est.counts[ss, aa]
        seen = n_lib > 0
        lib_T, lib_R = confidence_radii(n_lib, est.meta)
        dT = np.abs(est.trans[ss, aa] / np.maximum(n_lib, 1)[:, None] - P_hat).sum(axis=1)
        dR = np.abs(est.rew_sum[ss, aa] / np.maximum(n_lib, 1) - R_hat)
        with np.errstate(invalid="ignore"):
            off = seen & ((dT > eps_T + lib_T) | (dR > eps_R + lib_R))
        if not off.any():
            keep.append(i)
    state.candidates = CandidateSet(keep, failed=not keep)
    return state.candidates


def informative_mask(ids, lib: ModelLibrary, gamma_sep: float) -> np.ndarray:
    """(S, A) bool: some two candidates differ by more than gamma_sep in l2."""
    ids = list(ids)
    S, A = lib[ids[0]].counts.shape if ids else (0, 0)
    mask = np.zeros((S, A), dtype=bool)
    for i, j in itertools.combinations(ids, 2):
        a, b = lib[i], lib[j]
        sq = ((a.P_hat - b.P_hat) ** 2).sum(axis=2) + (a.R_hat - b.R_hat) ** 2
        mask |= sq > gamma_sep ** 2
    return mask


def informative_pairs(candidates, lib: ModelLibrary, gamma_sep: float) -> list[tuple[int, int]]:
    ids = candidates.ids if isinstance(candidates, CandidateSet) else candidates
    if len(ids) < 2:
        return []
    return [tuple(map(int, p)) for p in np.argwhere(informative_mask(ids, lib, gamma_sep))]


def _plan(P, R, gamma, V0=None):
    rows = _kernels.sparse_rows(np.ascontiguousarray(P))
    V0 = np.zeros(R.shape[0]) if V0 is None else V0
    V, Q, _, _ = _kernels.sparse_sweeps(*rows, np.ascontiguousarray(R, dtype=float), gamma, V0, 1e-8, 100_000)
    return V, Q


def _greedy_policy(P, R, gamma, V0=None):
    return np.argmax(_plan(P, R, gamma, V0)[1], axis=1)


def _estimate_policy(est, R, gamma) -> np.ndarray:
    _, Q, _, _ = _kernels.sparse_sweeps(*est.sparse, np.ascontiguousarray(R, dtype=float), gamma,
                                        np.zeros(R.shape[0]), 1e-8, 100_000)
    return np.argmax(Q, axis=1)


def exploration_policy(state: FmrlState, lib: ModelLibrary, gamma_sep: float, gamma: float,
                       v_max: float, informative: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Greedy policy on the lowest-id candidate's dynamics with a bonus of
    v_max (1 - gamma) at informative pairs below n_elim visits, and the mask
    of those bonus pairs."""
    ids = state.candidates.ids
    if informative is None:
        informative = informative_mask(ids, lib, gamma_sep)
    bonus = informative & (state.data.counts < state.n_elim)
    R = np.where(bonus, v_max * (1.0 - gamma), 0.0)
    return _estimate_policy(lib[min(ids)], R, gamma), bonus


def fmrl_act(state: FmrlState, lib: ModelLibrary, s: int, v_max: float, gamma: float,
             gamma_sep: float = 0.0) -> int:
    """Action in state s under the current Finite-Model-RL rule."""
    if state.candidates.failed:
        raise RuntimeError("all candidates eliminated; use the Rmax fallback")
    ids = state.candidates.ids
    if len(ids) >= 2:
        policy, bonus = exploration_policy(state, lib, gamma_sep, gamma, v_max)
        if bonus.any():
            return int(policy[s])
    est = lib[min(ids)]
    return int(_estimate_policy(est, est.R_hat, gamma)[s])


# ---------------------------------------------------------------------------
# Task runners

@dataclass
class TaskTrace:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    candidates: np.ndarray
    mode: np.ndarray  # object array of mode strings

    @classmethod
    def allocate(cls, H: int) -> "TaskTrace":
        return cls(np.zeros(H, dtype=np.int64), np.zeros(H, dtype=np.int64), np.zeros(H),
                   np.zeros(H, dtype=np.int64), np.empty(H, dtype=object))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "s", "a", "r", "candidates_remaining", "mode"])
            for i in range(len(self.s)):
                w.writerow([i + 1, self.s[i], self.a[i], f"{self.r[i]:.9g}", self.candidates[i], self.mode[i]])


@dataclass
class TaskResult:
    reward: float
    steps: int
    mistakes: int | None
    final_candidates: list[int]
    failed: bool
    mode_steps: dict[str, int] = field(default_factory=dict)
    trace: TaskTrace | None = None


class _Runner:
    """Shared segment loop: bookkeeping for counts, reward, trace and mistakes."""

    _EMPTY_I = np.zeros(0, dtype=np.int64)
    _EMPTY_F = np.zeros(0)

    def __init__(self, env: FiniteMdp, H: int, rng, data: ExploreState, s: int,
                 meter: MistakeMeter | None, record: bool, steps: int = 0):
        self.env, self.H, self.rng, self.data, self.s = env, H, rng, data, s
        self.meter = meter
        self.trace = TaskTrace.allocate(H) if record else None
        self.steps = steps
        self.reward = 0.0
        self.mode_steps: dict[str, int] = {}

    @property
    def left(self) -> int:
        return self.H - self.steps

    def segment(self, policy, watch, threshold, mode, n_cands=0, n_max=None) -> np.ndarray:
        """Roll out one stationary policy; returns the per-state visit counts."""
        n_max = self.left if n_max is None else min(n_max, self.left)
        visits = np.zeros(self.env.S, dtype=np.int64)
        if self.trace is not None:
            tr = (self.trace.s, self.trace.a, self.trace.r)
        else:
            tr = (self._EMPTY_I, self._EMPTY_I, self._EMPTY_F)
        n, self.s, total = _kernels.rollout(
            self.env.cum_P, self.env.R, self.env.bernoulli, np.ascontiguousarray(policy, dtype=np.int64),
            self.s, n_max, self.rng, self.data.counts, self.data.trans, self.data.rew_sum, visits,
            watch, threshold, *tr, self.steps)
        if self.trace is not None:
            self.trace.candidates[self.steps:self.steps + n] = n_cands
            self.trace.mode[self.steps:self.steps + n] = mode
        if self.meter is not None:
            self.meter.add_visits(policy, visits)
        self.steps += n
        self.data.steps += n
        self.reward += total
        self.mode_steps[mode] = self.mode_steps.get(mode, 0) + n
        return visits


def _rmax_loop(run: _Runner, m: int, gamma: float, mode: str) -> None:
    """Optimistic planning: unknown pairs are self-loops paying the maximum reward.
    The model rows are refreshed only for states visited since the last plan."""
    S, A = run.env.S, run.env.A
    idx = np.zeros((S, A, S), dtype=np.int64)
    pr = np.zeros((S, A, S))
    nnz = np.ones((S, A), dtype=np.int64)
    Rk = np.ones((S, A))
    touched = np.arange(S)
    V = np.zeros(S)
    while run.left > 0:
        _kernels.optimistic_rows(run.data.counts, run.data.trans, run.data.rew_sum, m, touched,
                                 idx, pr, nnz, Rk)
        V, Q, _, _ = _kernels.sparse_sweeps(idx, pr, nnz, Rk, gamma, V, 1e-8, 100_000)
        policy = np.argmax(Q, axis=1)
        visits = run.segment(policy, run.data.counts < m, m, mode)
        touched = np.flatnonzero(visits)


def single_task_rmax(env: FiniteMdp, m: int, epsilon: float, gamma: float, H: int,
                     rng: np.random.Generator, count_mistakes: bool = True,
                     record: bool = False, meter: MistakeMeter | None = None,
                     data: ExploreState | None = None) -> TaskResult:
    """Classic Rmax for one task of H steps. Starts from scratch unless `data`
    carries samples from earlier tasks (updated in place)."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if meter is None and count_mistakes:
        meter = MistakeMeter(env, epsilon)
    base = meter.total if meter is not None else 0
    data = ExploreState.empty(env.S, env.A) if data is None else data
    run = _Runner(env, H, rng, data, env.sample_start(rng), meter, record)
    _rmax_loop(run, m, gamma, RMAX)
    mistakes = meter.total - base if meter is not None else None
    return TaskResult(run.reward, run.steps, mistakes, [], False, run.mode_steps, run.trace)


def run_fmrl(env: FiniteMdp, lib: ModelLibrary, H: int, rng: np.random.Generator, *,
             n_elim: int, meta: RadiusMeta, gamma_sep: float, gamma: float, m_fallback: int,
             meter: MistakeMeter | None = None, record: bool = False) -> TaskResult:
    """One task of H steps with Finite-Model-RL over the library."""
    v_max = 1.0 / (1.0 - gamma)
    state = FmrlState.start(lib, env.S, env.A, n_elim, meta)
    base = meter.total if meter is not None else 0
    run = _Runner(env, H, rng, state.data, env.sample_start(rng), meter, record)
    exploit_cache: dict[int, np.ndarray] = {}
    mask_cache: dict[tuple, np.ndarray] = {}
    while run.left > 0 and not state.candidates.failed:
        ids = state.candidates.ids
        if len(ids) >= 2:
            key = tuple(ids)
            if key not in mask_cache:
                mask_cache[key] = informative_mask(ids, lib, gamma_sep)
            policy, bonus = exploration_policy(state, lib, gamma_sep, gamma, v_max, mask_cache[key])
            if bonus.any():
                run.segment(policy, bonus, n_elim, IDENTIFY, len(ids))
                eliminate_candidates(state, lib)
                continue
        # one candidate left, or the survivors agree on every pair worth testing
        top = min(ids)
        if top not in exploit_cache:
            est = lib[top]
            exploit_cache[top] = _estimate_policy(est, est.R_hat, gamma)
        # keep checking consistency at pairs the exploit policy keeps visiting
        watch = state.data.counts < n_elim
        run.segment(exploit_cache[top], watch, n_elim, EXPLOIT, len(ids))
        eliminate_candidates(state, lib)
    if state.candidates.failed and run.left > 0:
        _rmax_loop(run, m_fallback, gamma, FALLBACK)
    mistakes = meter.total - base if meter is not None else None
    return TaskResult(run.reward, run.steps, mistakes, list(state.candidates.ids),
                      state.candidates.failed, run.mode_steps, run.trace)
