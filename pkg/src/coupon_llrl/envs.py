"""Experiment environments and task schedules.

Gridworld states are indexed row-major from the upper-left cell (index 0).
Named cells follow the experiment description: s1 is the upper-left corner,
s5 the upper-right corner, s20 the lower-left corner, s25 the lower-right
corner and s13 the centre (start). Task-model ids are 1-based labels.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .mdp import BERNOULLI, DETERMINISTIC, FiniteMdp, separation_gap

GRID = 5
UP, DOWN, LEFT, RIGHT = range(4)
ACTION_NAMES = ("up", "down", "left", "right")
_MOVES = {UP: (-1, 0), DOWN: (1, 0), LEFT: (0, -1), RIGHT: (0, 1)}

S1, S5, S13, S20, S25 = 0, 4, 12, 20, 24
TRAP_CORNERS = (S5, S20, S25)
STATE_LABELS = {S1: "s1", S5: "s5", S13: "s13", S20: "s20", S25: "s25"}

GRIDWORLD_REWARDS = {
    1: {S20: 0.75},
    2: {S5: 0.75},
    3: {S25: 0.75},
    4: {S25: 0.75, S1: 0.99},
}
GRIDWORLD_GAMMA = 0.95
GRIDWORLD_H = 2000


def _gridworld_P(success: float = 0.85, corner_stay: float = 0.95) -> np.ndarray:
    S, A = GRID * GRID, 4
    slip = (1.0 - success) / 3
    P = np.zeros((S, A, S))
    for s in range(S):
        if s in TRAP_CORNERS:
            P[s, :, s] = corner_stay
            P[s, :, S13] += 1.0 - corner_stay
            continue
        r, c = divmod(s, GRID)
        for a in range(A):
            for d, (dr, dc) in _MOVES.items():
                nr, nc = r + dr, c + dc
                sp = nr * GRID + nc if 0 <= nr < GRID and 0 <= nc < GRID else s
                P[s, a, sp] += success if d == a else slip
    return P


_GRID_P = _gridworld_P()


def build_gridworld(variant: int, gamma: float = GRIDWORLD_GAMMA) -> FiniteMdp:
    if variant not in GRIDWORLD_REWARDS:
        raise ValueError(f"variant must be one of 1..4, got {variant}")
    R = np.zeros((GRID * GRID, 4))
    for s, p in GRIDWORLD_REWARDS[variant].items():
        R[s, :] = p
    start = np.zeros(GRID * GRID)
    start[S13] = 1.0
    return FiniteMdp(_GRID_P, R, gamma, BERNOULLI, start)


def gridworld_family(gamma: float = GRIDWORLD_GAMMA) -> dict[int, FiniteMdp]:
    return {v: build_gridworld(v, gamma) for v in GRIDWORLD_REWARDS}


# ---------------------------------------------------------------------------
# Schedules

@dataclass(frozen=True)
class StochasticSchedule:
    mu: tuple[float, ...]  # over model ids 1..len(mu)

    def __post_init__(self):
        object.__setattr__(self, "mu", tuple(float(p) for p in self.mu))
        if any(p < 0 for p in self.mu) or abs(sum(self.mu) - 1.0) > 1e-9:
            raise ValueError(f"mu must be a probability vector, got {self.mu}")


@dataclass(frozen=True)
class Phase:
    ids: tuple[int, ...]  # drawn uniformly
    length: int


@dataclass(frozen=True)
class NonstationarySchedule:
    phases: tuple[Phase, ...]

    @property
    def total(self) -> int:
        return sum(p.length for p in self.phases)

    def phase_of(self, t: int) -> int:
        end = 0
        for i, p in enumerate(self.phases):
            end += p.length
            if t <= end:
                return i
        raise ValueError(f"task {t} beyond the {self.total}-task schedule")


@dataclass(frozen=True)
class ScriptedSchedule:
    ids: tuple[int, ...]


TaskSchedule = StochasticSchedule | NonstationarySchedule | ScriptedSchedule


def nonstationary_schedule(E: int, total: int = 100, block: int = 25,
                           common=(1, 2, 3), rare: int = 4) -> NonstationarySchedule:
    """Common models for E tasks, the rare model for `block` tasks, then common again."""
    if E < 0 or E + block > total:
        raise ValueError(f"need 0 <= E and E + {block} <= {total}, got E={E}")
    phases = [Phase(tuple(common), E), Phase((rare,), block), Phase(tuple(common), total - E - block)]
    return NonstationarySchedule(tuple(p for p in phases if p.length > 0))


def sample_task(schedule: TaskSchedule, t: int, rng: np.random.Generator) -> int:
    """Model id for task t (1-based). Consumes one uniform per call."""
    if t < 1:
        raise ValueError("t must be >= 1")
    u = rng.random()
    if isinstance(schedule, StochasticSchedule):
        cdf = np.cumsum(schedule.mu)
        return int(min(np.searchsorted(cdf, u, side="right"), len(cdf) - 1)) + 1
    if isinstance(schedule, NonstationarySchedule):
        ids = schedule.phases[schedule.phase_of(t)].ids
        return ids[min(int(u * len(ids)), len(ids) - 1)]
    if t > len(schedule.ids):
        raise ValueError(f"scripted schedule exhausted at task {t}")
    return schedule.ids[t - 1]


def schedule_to_dict(schedule: TaskSchedule) -> dict:
    if isinstance(schedule, StochasticSchedule):
        return {"kind": "stochastic", "params": {"mu": list(schedule.mu)}}
    if isinstance(schedule, NonstationarySchedule):
        return {"kind": "nonstationary",
                "params": {"phases": [{"ids": list(p.ids), "length": p.length} for p in schedule.phases]}}
    return {"kind": "scripted", "params": {"ids": list(schedule.ids)}}


def schedule_from_dict(d: dict) -> TaskSchedule:
    kind, params = d["kind"], d.get("params", {})
    if kind == "stochastic":
        return StochasticSchedule(tuple(params["mu"]))
    if kind == "nonstationary":
        if "E" in params:
            return nonstationary_schedule(int(params["E"]), params.get("total", 100), params.get("block", 25))
        return NonstationarySchedule(tuple(Phase(tuple(p["ids"]), int(p["length"])) for p in params["phases"]))
    if kind == "scripted":
        return ScriptedSchedule(tuple(params["ids"]))
    raise ValueError(f"unknown schedule kind {kind!r}")


# ---------------------------------------------------------------------------
# Synthetic separated families

def synthetic_family(C: int, S: int, A: int, gamma_sep: float, seed: int = 0,
                     gamma: float = 0.9, max_tries: int = 1000) -> list[FiniteMdp]:
    """C models sharing random dynamics whose rewards differ pairwise by at least gamma_sep."""
    if C < 2:
        raise ValueError("need C >= 2")
    if gamma_sep > 1.0:
        raise ValueError("rewards live in [0, 1]; a reward-only separation above 1 is infeasible")
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(S), size=(S, A))
    for _ in range(max_tries):
        Rs = [rng.random((S, A)) * 0.2 for _ in range(C)]
        # each model gets one distinguishing high-reward pair
        for i, R in enumerate(Rs):
            s, a = rng.integers(S), rng.integers(A)
            R[s, a] = rng.uniform(max(gamma_sep, 0.3), 1.0) if gamma_sep > 0 else R[s, a]
        family = [FiniteMdp(P, R, gamma, DETERMINISTIC) for R in Rs]
        if all(separation_gap(a, b) >= gamma_sep for a, b in itertools.combinations(family, 2)):
            return family
    raise ValueError(f"could not build a {gamma_sep}-separated family in {max_tries} tries")


# ---------------------------------------------------------------------------
# Box-painting analog: pose lattice with 3x3x3 moves

HRI_MU = (0.07, 0.31, 0.31, 0.31)
HRI_DIMS = (5, 11, 11)


def hri_analog(dims: Sequence[int] = HRI_DIMS, noise_sd: float = 0.01, seed: int = 0,
               gamma: float = 0.95) -> tuple[list[FiniteMdp], StochasticSchedule]:
    """Four deterministic-dynamics models over a box-pose lattice.

    Actions move each pose coordinate by -1, 0 or +1 (clipped at the bounds).
    Each user type rewards approaching a different target pose; rewards are
    perturbed once by N(0, noise_sd) and clipped to [0, 1].
    """
    dims = tuple(int(d) for d in dims)
    poses = list(itertools.product(*[range(d) for d in dims]))
    index = {p: i for i, p in enumerate(poses)}
    moves = list(itertools.product((-1, 0, 1), repeat=len(dims)))
    S, A = len(poses), len(moves)
    P = np.zeros((S, A, S))
    nxt = np.zeros((S, A), dtype=np.int64)
    for i, p in enumerate(poses):
        for a, mv in enumerate(moves):
            q = tuple(min(max(c + d, 0), n - 1) for c, d, n in zip(p, mv, dims))
            nxt[i, a] = index[q]
            P[i, a, index[q]] = 1.0
    hi = [d - 1 for d in dims]
    mid = [d // 2 for d in dims]
    targets = [
        (hi[0], 0, mid[2]),
        (0, mid[1], mid[2]),
        (mid[0], hi[1], mid[2]),
        (mid[0], mid[1], hi[2]),
    ]
    rng = np.random.default_rng(seed)
    coords = np.array(poses, dtype=float)
    scale = np.array([max(h, 1) for h in hi], dtype=float)
    models = []
    for target in targets:
        dist = np.abs((coords - np.array(target, dtype=float)) / scale).sum(axis=1)
        closeness = np.clip(1.0 - dist, 0.0, 1.0) ** 2
        R = closeness[nxt]  # reward for the pose an action lands on
        R = np.clip(R + rng.normal(0.0, noise_sd, size=R.shape), 0.0, 1.0)
        start = np.zeros(S)
        start[index[tuple(mid)]] = 1.0
        models.append(FiniteMdp(P, R, gamma, DETERMINISTIC, start))
    return models, StochasticSchedule(HRI_MU)


def hri_horizon(mdp: FiniteMdp) -> int:
    return 3 * mdp.S * mdp.A


def describe(mdp: FiniteMdp, labels: dict[int, str] | None = None) -> dict:
    labels = labels or {}
    sites = {}
    for s in np.flatnonzero(mdp.R.max(axis=1) > 0):
        if mdp.S <= 64:
            sites[labels.get(int(s), f"state{int(s)}")] = float(mdp.R[s].max())
    return {"S": mdp.S, "A": mdp.A, "gamma": mdp.gamma, "reward_noise": mdp.reward_noise,
            "support": mdp.support_size, "reward_sites": sites}
