"""Systematic exploration: drive every state-action pair to m visits.

Least-tried actions are taken whenever the current state still has an
under-visited action; otherwise the agent plans an L-step escape through the
empirical known-state MDP, where unknown pairs are rewarding self-loops.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .mdp import FiniteMdp

LEAST_TRIED = "least_tried"
ESCAPE = "escape"


@dataclass
class ExploreState:
    counts: np.ndarray  # (S, A) visits
    trans: np.ndarray  # (S, A, S) next-state counts
    rew_sum: np.ndarray  # (S, A)
    steps: int = 0
    complete: bool = False

    @classmethod
    def empty(cls, S: int, A: int) -> "ExploreState":
        return cls(np.zeros((S, A), dtype=np.int64), np.zeros((S, A, S), dtype=np.int64),
                   np.zeros((S, A)))

    @property
    def S(self) -> int:
        return self.counts.shape[0]

    @property
    def A(self) -> int:
        return self.counts.shape[1]

    def record(self, s: int, a: int, sp: int, r: float) -> None:
        self.counts[s, a] += 1
        self.trans[s, a, sp] += 1
        self.rew_sum[s, a] += r
        self.steps += 1

    def known(self, m: int) -> np.ndarray:
        return self.counts >= m

    def empirical_P(self) -> np.ndarray:
        n = np.maximum(self.counts, 1)[..., None]
        return self.trans / n

    def empirical_R(self) -> np.ndarray:
        return self.rew_sum / np.maximum(self.counts, 1)


def build_known_state_mdp(state: ExploreState, m: int, gamma: float = 0.95) -> FiniteMdp:
    """Known pairs: empirical transitions, reward 0. Unknown: self-loop, reward 1."""
    if m < 1:
        raise ValueError("m must be >= 1")
    P, R = _known_state_arrays(state, m)
    return FiniteMdp(P, R, gamma)


def _known_state_arrays(state: ExploreState, m: int) -> tuple[np.ndarray, np.ndarray]:
    known = state.known(m)
    S = state.S
    P = state.empirical_P()
    loops = np.broadcast_to(np.eye(S)[:, None, :], P.shape)
    P = np.where(known[..., None], P, loops)
    R = np.where(known, 0.0, 1.0)
    return P, R


def plan_escape(km: FiniteMdp | tuple, L: int) -> np.ndarray:
    """Nonstationary policy, shape (L, S): action to take at plan step k in state s."""
    if L < 1:
        raise ValueError("L must be >= 1")
    P, R = (km.P, km.R) if isinstance(km, FiniteMdp) else km
    policy, _ = _kernels.finite_horizon_plan(np.ascontiguousarray(P), np.ascontiguousarray(R), L)
    return policy


def escape_value(km: FiniteMdp, L: int) -> np.ndarray:
    _, V = _kernels.finite_horizon_plan(np.ascontiguousarray(km.P), np.ascontiguousarray(km.R), L)
    return V


MODES = (LEAST_TRIED, ESCAPE)


@dataclass
class Trajectory:
    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray
    r: np.ndarray
    mode_code: np.ndarray  # index into MODES
    # stationary policy the agent was committed to at each step, (steps, S)
    policies: np.ndarray | None = None

    def __len__(self):
        return len(self.s)

    @property
    def mode(self) -> list[str]:
        return [MODES[c] for c in self.mode_code]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "s", "a", "s_next", "r", "mode"])
            for i in range(len(self.s)):
                w.writerow([i + 1, self.s[i], self.a[i], self.s_next[i], f"{self.r[i]:.9g}",
                            MODES[self.mode_code[i]]])


@dataclass
class ExploreResult:
    state: ExploreState
    trajectory: Trajectory
    final_state: int

    @property
    def complete(self) -> bool:
        return self.state.complete


def run_pac_explore(env: FiniteMdp, m: int, L: int, max_steps: int, rng: np.random.Generator,
                    s0: int | None = None, record_policies: bool = False,
                    state: ExploreState | None = None) -> ExploreResult:
    """Explore until every pair has m visits or the state's step total reaches max_steps.

    Randomness per step: one uniform for the transition, then one for the
    reward when rewards are Bernoulli.
    """
    if m < 1 or L < 1:
        raise ValueError("m and L must be >= 1")
    state = state or ExploreState.empty(env.S, env.A)
    s = env.sample_start(rng) if s0 is None else s0
    budget = max(0, max_steps - state.steps)
    ints = lambda: np.zeros(budget, dtype=np.int64)
    tr = (ints(), ints(), ints(), np.zeros(budget), np.zeros(budget, dtype=np.int8))
    pol = np.zeros((budget if record_policies else 0, env.S), dtype=np.int64)
    steps, s, n_under = _kernels.explore_loop(
        env.cum_P, env.R, env.bernoulli, m, L, budget, s, rng,
        state.counts, state.trans, state.rew_sum, *tr, pol)
    state.steps += steps
    state.complete = n_under == 0
    traj = Trajectory(*(x[:steps] for x in tr), policies=pol[:steps] if record_policies else None)
    return ExploreResult(state, traj, int(s))


def explore_thresholds(N: int, D: float, delta: float, S: int, A: int, m: int,
                       c1: float = 1.0, c2: float = 1.0) -> tuple[float, float]:
    """(m0, H0): minimum useful m and the step budget for m visits everywhere."""
    m0 = c1 * N * D ** 2 * math.log(N / delta)
    h0 = c2 * S * A * D * m
    return m0, h0
