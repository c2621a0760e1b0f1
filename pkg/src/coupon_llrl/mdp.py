"""Finite discounted MDPs: planning, evaluation, diameter and model distance."""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from . import _kernels

DETERMINISTIC = "deterministic"
BERNOULLI = "bernoulli"


class MdpError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FiniteMdp:
    P: np.ndarray  # (S, A, S) transition probabilities
    R: np.ndarray  # (S, A) mean rewards in [0, 1]
    gamma: float
    reward_noise: str = DETERMINISTIC
    start: np.ndarray | None = None

    def __post_init__(self):
        P = np.array(self.P, dtype=float)
        R = np.array(self.R, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2] or R.shape != P.shape[:2]:
            raise MdpError(f"shape mismatch: P{P.shape}, R{R.shape}")
        if self.reward_noise not in (DETERMINISTIC, BERNOULLI):
            raise MdpError(f"unknown reward_noise {self.reward_noise!r}")
        start = np.zeros(P.shape[0]) if self.start is None else np.array(self.start, dtype=float)
        if self.start is None:
            start[0] = 1.0
        for arr in (P, R, start):
            arr.setflags(write=False)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "start", start)

    @property
    def S(self) -> int:
        return self.P.shape[0]

    @property
    def A(self) -> int:
        return self.P.shape[1]

    @cached_property
    def cum_P(self) -> np.ndarray:
        c = np.cumsum(self.P, axis=2)
        c[..., -1] = 1.0
        return c

    @cached_property
    def sparse(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Successor lists (idx, prob, nnz) for the compiled planners."""
        return _kernels.sparse_rows(self.P)

    @property
    def bernoulli(self) -> bool:
        return self.reward_noise == BERNOULLI

    @property
    def support_size(self) -> int:
        return int((self.P > 0).sum(axis=2).max())

    def dynamics_vector(self, s: int, a: int) -> np.ndarray:
        return np.append(self.P[s, a], self.R[s, a])

    def sample_start(self, rng: np.random.Generator) -> int:
        cdf = np.cumsum(self.start)
        return int(min(np.searchsorted(cdf, rng.random(), side="right"), self.S - 1))


@dataclass(frozen=True)
class ValueSolution:
    V: np.ndarray
    Q: np.ndarray
    policy: np.ndarray
    residual: float


def validate(mdp: FiniteMdp, atol: float = 1e-9) -> list[str]:
    """Every violated invariant, with its location. Empty means valid."""
    problems = []
    if not 0.0 < mdp.gamma < 1.0:
        problems.append(f"gamma={mdp.gamma} outside (0, 1)")
    neg = np.argwhere(mdp.P < 0)
    for s, a, sp in neg:
        problems.append(f"P[{s},{a},{sp}]={mdp.P[s, a, sp]} is negative")
    sums = mdp.P.sum(axis=2)
    for s, a in np.argwhere(np.abs(sums - 1.0) > atol):
        problems.append(f"P(.|s={s},a={a}) sums to {sums[s, a]:.12g}")
    for s, a in np.argwhere((mdp.R < 0) | (mdp.R > 1)):
        problems.append(f"R[{s},{a}]={mdp.R[s, a]} outside [0, 1]")
    if np.any(mdp.start < 0) or abs(mdp.start.sum() - 1.0) > atol:
        problems.append("start distribution is not a probability vector")
    return problems


def value_iteration(mdp: FiniteMdp, tol: float = 1e-6, V0: np.ndarray | None = None,
                    max_iter: int = 1_000_000) -> ValueSolution:
    V = np.zeros(mdp.S) if V0 is None else np.array(V0, dtype=float)
    V, Q, resid, _ = _kernels.sparse_sweeps(*mdp.sparse, mdp.R, mdp.gamma, V, tol, max_iter)
    return ValueSolution(V, Q, greedy(Q), float(resid))


def greedy(Q: np.ndarray) -> np.ndarray:
    """Argmax per state; np.argmax already breaks ties toward the lowest index."""
    return np.argmax(Q, axis=1)


def q_values(mdp: FiniteMdp, V: np.ndarray) -> np.ndarray:
    return mdp.R + mdp.gamma * mdp.P @ V


def policy_value(mdp: FiniteMdp, policy, tol: float | None = None) -> np.ndarray:
    """Exact V^pi from the linear system (I - gamma P_pi) V = R_pi."""
    policy = np.asarray(policy, dtype=np.int64)
    idx = np.arange(mdp.S)
    P_pi = mdp.P[idx, policy]
    R_pi = mdp.R[idx, policy]
    return np.linalg.solve(np.eye(mdp.S) - mdp.gamma * P_pi, R_pi)


def policy_values(mdp: FiniteMdp, policies: np.ndarray, chunk: int = 2048) -> np.ndarray:
    """V^pi for a stack of policies, shape (K, S) -> (K, S)."""
    policies = np.asarray(policies, dtype=np.int64)
    out = np.empty(policies.shape, dtype=float)
    idx = np.arange(mdp.S)
    eye = np.eye(mdp.S)
    for lo in range(0, len(policies), chunk):
        pols = policies[lo:lo + chunk]
        P_pi = mdp.P[idx[None, :], pols]  # (k, S, S)
        R_pi = mdp.R[idx[None, :], pols]
        out[lo:lo + chunk] = np.linalg.solve(eye - mdp.gamma * P_pi, R_pi[..., None])[..., 0]
    return out


# ---------------------------------------------------------------------------
# Diameter

def _almost_sure_set(mdp: FiniteMdp, target: int) -> tuple[np.ndarray, np.ndarray]:
    """States that can reach `target` with probability 1, and their distance to
    it in the graph of actions whose successors all stay inside that set."""
    succ = mdp.P > 0
    inside = np.ones(mdp.S, dtype=bool)
    while True:
        safe = ~(succ & ~inside[None, None, :]).any(axis=2)  # (S, A)
        dist = np.full(mdp.S, np.inf)
        dist[target] = 0
        frontier = deque([target])
        while frontier:
            sp = frontier.popleft()
            for s in np.flatnonzero((succ[:, :, sp] & safe).any(axis=1)):
                if dist[s] == np.inf:
                    dist[s] = dist[sp] + 1
                    frontier.append(s)
        reached = np.isfinite(dist)
        if np.array_equal(reached, inside):
            return inside, dist
        inside = reached


def hitting_times(mdp: FiniteMdp, target: int, max_iter: int = 1000) -> np.ndarray:
    """Minimal expected steps to reach `target` from each state (inf if no
    policy gets there with probability 1).

    Policy iteration on the stochastic shortest-path problem with the target
    absorbing at cost 0, started from a proper policy that moves toward the
    target along actions that cannot leave the almost-sure set.
    """
    S = mdp.S
    inside, dist = _almost_sure_set(mdp, target)
    h = np.full(S, np.inf)
    h[target] = 0.0
    states = np.flatnonzero(inside & (np.arange(S) != target))
    if len(states) == 0:
        return h
    succ = mdp.P > 0
    safe = ~(succ & ~inside[None, None, :]).any(axis=2)
    policy = np.zeros(S, dtype=np.int64)
    for s in states:
        for a in np.flatnonzero(safe[s]):
            if np.any(dist[np.flatnonzero(succ[s, a])] < dist[s]):
                policy[s] = a
                break
    n = len(states)
    for _ in range(max_iter):
        P_sub = mdp.P[states, policy[states]][:, states]
        h[states] = np.linalg.solve(np.eye(n) - P_sub, np.ones(n))
        cost = 1.0 + mdp.P[states][:, :, inside] @ h[inside]  # (n, A)
        cost[~safe[states]] = np.inf
        cur = cost[np.arange(n), policy[states]]
        best = cost.min(axis=1)
        improve = best < cur - 1e-12 * np.maximum(1.0, cur)
        if not improve.any():
            break
        for i in np.flatnonzero(improve):
            policy[states[i]] = int(np.argmin(cost[i]))
    return h


def diameter(mdp: FiniteMdp) -> float:
    """Max over ordered pairs s != s' of the minimal expected hitting time.
    Returns math.inf when some pair is unreachable."""
    if mdp.S == 1:
        return 0.0
    if np.all((mdp.P == 0) | (mdp.P == 1)):
        return _deterministic_diameter(mdp)
    return float(max(hitting_times(mdp, t).max() for t in range(mdp.S)))


def _deterministic_diameter(mdp: FiniteMdp) -> float:
    nxt = mdp.P.argmax(axis=2)  # (S, A)
    worst = 0
    for src in range(mdp.S):
        dist = np.full(mdp.S, -1)
        dist[src] = 0
        q = deque([src])
        while q:
            s = q.popleft()
            for sp in nxt[s]:
                if dist[sp] < 0:
                    dist[sp] = dist[s] + 1
                    q.append(sp)
        if (dist < 0).any():
            return math.inf
        worst = max(worst, int(dist.max()))
    return float(worst)


# ---------------------------------------------------------------------------
# Model distance

def separation_gap(m1: FiniteMdp, m2: FiniteMdp) -> float:
    """Largest l2 distance between the two models' dynamics vectors over all (s, a)."""
    if m1.P.shape != m2.P.shape:
        raise MdpError(f"shape mismatch: {m1.P.shape} vs {m2.P.shape}")
    sq = ((m1.P - m2.P) ** 2).sum(axis=2) + (m1.R - m2.R) ** 2
    return float(np.sqrt(sq.max()))


def family_separation(mdps: Sequence[FiniteMdp]) -> float:
    gaps = [separation_gap(a, b) for i, a in enumerate(mdps) for b in mdps[i + 1:]]
    return min(gaps) if gaps else math.inf


def max_support(mdps: Sequence[FiniteMdp]) -> int:
    return max(m.support_size for m in mdps)


def gamma0_default(epsilon: float, gamma: float, N: int, v_max: float, c: float = 1.0) -> float:
    """Separation that makes eps-optimal policies transfer between close models."""
    return c * epsilon * (1.0 - gamma) / (math.sqrt(N) * v_max)


# ---------------------------------------------------------------------------
# Simulation

def sample_step(mdp: FiniteMdp, s: int, a: int, rng: np.random.Generator) -> tuple[int, float]:
    sp = int(_kernels.draw_next(mdp.cum_P[s, a], rng.random()))
    if mdp.bernoulli:
        r = 1.0 if rng.random() < mdp.R[s, a] else 0.0
    else:
        r = float(mdp.R[s, a])
    return sp, r


# ---------------------------------------------------------------------------
# JSON

def mdp_to_dict(mdp: FiniteMdp) -> dict:
    return {
        "S": mdp.S, "A": mdp.A, "gamma": mdp.gamma, "reward_noise": mdp.reward_noise,
        "start": mdp.start.tolist(), "P": mdp.P.tolist(), "R": mdp.R.tolist(),
    }


def mdp_from_dict(d: dict) -> FiniteMdp:
    try:
        mdp = FiniteMdp(np.array(d["P"]), np.array(d["R"]), float(d["gamma"]),
                        d.get("reward_noise", DETERMINISTIC), d.get("start"))
    except KeyError as exc:
        raise MdpError(f"missing field {exc.args[0]!r}") from None
    if mdp.S != d.get("S", mdp.S) or mdp.A != d.get("A", mdp.A):
        raise MdpError(f"declared S/A ({d.get('S')}, {d.get('A')}) disagree with P{mdp.P.shape}")
    problems = validate(mdp)
    if problems:
        raise MdpError("; ".join(problems))
    return mdp


def save_mdp(mdp: FiniteMdp, path) -> None:
    with open(path, "w") as fh:
        json.dump(mdp_to_dict(mdp), fh)


def load_mdp(path) -> FiniteMdp:
    with open(path) as fh:
        return mdp_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# Mistake accounting

class MistakeMeter:
    """Counts visits to states where the committed policy is more than
    epsilon worse than optimal in the true MDP. V^pi is cached per policy."""

    def __init__(self, mdp: FiniteMdp, epsilon: float, v_star: np.ndarray | None = None):
        self.mdp = mdp
        self.epsilon = epsilon
        self.v_star = value_iteration(mdp, tol=1e-10).V if v_star is None else v_star
        self._cache: dict[bytes, np.ndarray] = {}
        self.total = 0

    def bad_states(self, policy: np.ndarray) -> np.ndarray:
        policy = np.ascontiguousarray(policy, dtype=np.int64)
        key = policy.tobytes()
        bad = self._cache.get(key)
        if bad is None:
            bad = self.v_star - policy_value(self.mdp, policy) > self.epsilon
            self._cache[key] = bad
        return bad

    def add_visits(self, policy: np.ndarray, visits: np.ndarray) -> int:
        n = int(visits[self.bad_states(policy)].sum())
        self.total += n
        return n

    def add_trace(self, states: np.ndarray, policies: np.ndarray) -> int:
        """Per-step committed policies, shape (K, S), evaluated in one batch."""
        states = np.asarray(states, dtype=np.int64)
        if len(states) == 0:
            return 0
        uniq, inv = np.unique(np.asarray(policies, dtype=np.int64), axis=0, return_inverse=True)
        bad = self.v_star[None, :] - policy_values(self.mdp, uniq) > self.epsilon
        n = int(bad[inv.ravel(), states].sum())
        self.total += n
        return n
