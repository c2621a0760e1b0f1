"""The online coupon-collector game.

Each round a coupon of hidden type arrives; the learner either probes it
(learning its type) or skips it. Losses follow a 2x2 matrix indexed by the
action and by whether the coupon's type had been probed before.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Protocol, Sequence

import numpy as np


class Action(str, Enum):
    PROBE = "P"
    SKIP = "S"


@dataclass(frozen=True)
class LossMatrix:
    """Costs of (Skip, known), (Probe, known), (Probe, novel), (Skip, novel)."""

    rho0: float = 0.0
    rho1: float = 1.0
    rho2: float = 1.0
    rho3: float = 2.0

    def __post_init__(self):
        vals = (self.rho0, self.rho1, self.rho2, self.rho3)
        if any(not math.isfinite(v) or v < 0 for v in vals):
            raise ValueError(f"loss values must be finite and non-negative, got {vals}")
        if not (self.rho0 < self.rho1 <= self.rho2 < self.rho3):
            raise ValueError(f"need rho0 < rho1 <= rho2 < rho3, got {vals}")


def loss_of(matrix: LossMatrix, action: Action, novel: bool) -> float:
    if action is Action.PROBE:
        return matrix.rho2 if novel else matrix.rho1
    return matrix.rho3 if novel else matrix.rho0


def optimal_loss(T: int, c_star: int, matrix: LossMatrix) -> float:
    """Loss of the type-aware strategy: probe first occurrences, skip the rest."""
    if c_star < 0 or c_star > T:
        raise ValueError(f"need 0 <= c_star <= T, got c_star={c_star}, T={T}")
    return matrix.rho2 * c_star + matrix.rho0 * (T - c_star)


# ---------------------------------------------------------------------------
# Observable history

@dataclass
class History:
    """What an admissible learner may see: its own actions, and for probed
    rounds the coupon type and the realised loss. Skipped rounds are blank."""

    actions: list[Action] = field(default_factory=list)
    probed_types: list[int | None] = field(default_factory=list)
    observed_losses: list[float | None] = field(default_factory=list)

    def __len__(self):
        return len(self.actions)

    def discovered(self) -> set[int]:
        return {m for m in self.probed_types if m is not None}

    def append(self, action: Action, type_id: int, loss: float) -> None:
        self.actions.append(action)
        if action is Action.PROBE:
            self.probed_types.append(type_id)
            self.observed_losses.append(loss)
        else:
            self.probed_types.append(None)
            self.observed_losses.append(None)


# ---------------------------------------------------------------------------
# Environments
#
# Stream layout: every round consumes exactly one uniform for the
# environment and one for the collector. With split streams the two come
# from independent child generators; otherwise they alternate
# (env at position 2(t-1), collector at 2(t-1)+1) in a single generator.

@dataclass(frozen=True)
class Stochastic:
    mu: tuple[float, ...]

    def __post_init__(self):
        mu = tuple(float(p) for p in self.mu)
        object.__setattr__(self, "mu", mu)
        if len(mu) == 0:
            raise ValueError("mu must be non-empty")
        if any(p < 0 for p in mu) or abs(sum(mu) - 1.0) > 1e-9:
            raise ValueError(f"mu must be a probability vector, got {mu}")

    @property
    def n_types(self) -> int:
        return len(self.mu)

    def types_from_uniforms(self, u: np.ndarray) -> np.ndarray:
        cdf = np.cumsum(self.mu)
        cdf[-1] = 1.0
        return np.minimum(np.searchsorted(cdf, u, side="right"), len(self.mu) - 1)

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.types_from_uniforms(rng.random(size))


@dataclass(frozen=True)
class Scripted:
    sequence: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "sequence", tuple(int(m) for m in self.sequence))
        if any(m < 0 for m in self.sequence):
            raise ValueError("type ids must be non-negative")

    @property
    def n_types(self) -> int:
        return max(self.sequence, default=-1) + 1


@dataclass(frozen=True)
class Adversarial:
    """Coupon types chosen by a deterministic rule of the observable history."""

    rule: Callable[[History], int]
    n_types: int


CouponEnvironment = Stochastic | Scripted | Adversarial


def hard_instance(T: int, C: int) -> Stochastic:
    """Lower-bound instance: C-1 rare types at 1/sqrt(T), the rest on the last type."""
    if C < 2:
        raise ValueError("need C >= 2")
    mu_m = 1.0 / math.sqrt(T)
    if (C - 1) * mu_m >= 1.0:
        raise ValueError(f"(C-1)/sqrt(T) = {(C - 1) * mu_m} must be < 1")
    mu = [mu_m] * (C - 1) + [1.0 - (C - 1) * mu_m]
    return Stochastic(tuple(mu))


# ---------------------------------------------------------------------------
# Game log

@dataclass(frozen=True)
class Round:
    t: int
    type_id: int
    action: Action
    loss: float
    novel: bool
    observed: bool


@dataclass
class GameLog:
    types: np.ndarray  # int, shape (T,)
    probes: np.ndarray  # bool, shape (T,)
    novel: np.ndarray  # bool, shape (T,)
    losses: np.ndarray  # float, shape (T,)
    seed: int
    matrix: LossMatrix

    @property
    def T(self) -> int:
        return len(self.types)

    @property
    def rounds(self) -> list[Round]:
        return [
            Round(t + 1, int(m), Action.PROBE if p else Action.SKIP, float(l), bool(n), bool(p))
            for t, (m, p, n, l) in enumerate(zip(self.types, self.probes, self.novel, self.losses))
        ]

    @property
    def total_loss(self) -> float:
        return float(self.losses.sum())

    @property
    def distinct_types(self) -> int:
        return len(np.unique(self.types))

    def cumulative_regret(self) -> np.ndarray:
        first_seen = _first_occurrence(self.types)
        c_star_t = np.cumsum(first_seen)
        t = np.arange(1, self.T + 1)
        opt = self.matrix.rho2 * c_star_t + self.matrix.rho0 * (t - c_star_t)
        return np.cumsum(self.losses) - opt

    def to_csv(self, path, append: bool = False) -> None:
        write_game_csv([self], path, append=append)


def write_game_csv(logs: Sequence[GameLog], path, append: bool = False) -> None:
    mode = "a" if append else "w"
    with open(path, mode, newline="") as fh:
        w = csv.writer(fh)
        if not append:
            w.writerow(["seed", "t", "type_id", "action", "novel", "loss", "cum_loss", "cum_regret"])
        for log in logs:
            cum_loss = np.cumsum(log.losses)
            cum_reg = log.cumulative_regret()
            for i in range(log.T):
                w.writerow([
                    log.seed, i + 1, int(log.types[i]), "P" if log.probes[i] else "S",
                    int(log.novel[i]), f"{log.losses[i]:.9g}", f"{cum_loss[i]:.9g}",
                    f"{cum_reg[i]:.9g}",
                ])


def _first_occurrence(types: np.ndarray) -> np.ndarray:
    first = np.zeros(len(types), dtype=bool)
    _, idx = np.unique(types, return_index=True)
    first[idx] = True
    return first


def regret_of_log(log: GameLog, matrix: LossMatrix | None = None) -> float:
    matrix = matrix or log.matrix
    losses = log.losses
    if matrix != log.matrix:
        losses = _losses(matrix, log.probes, log.novel)
    return float(losses.sum()) - optimal_loss(log.T, log.distinct_types, matrix)


def _losses(matrix: LossMatrix, probes: np.ndarray, novel: np.ndarray) -> np.ndarray:
    return np.where(
        probes,
        np.where(novel, matrix.rho2, matrix.rho1),
        np.where(novel, matrix.rho3, matrix.rho0),
    ).astype(float)


# ---------------------------------------------------------------------------
# Playing

class Collector(Protocol):
    def reset(self, T: int) -> None: ...

    def act(self, t: int, history: History, u: float) -> Action: ...


def _streams(seed: int, split: bool, T: int) -> tuple[np.ndarray, np.ndarray]:
    if split:
        env_ss, col_ss = np.random.SeedSequence(seed).spawn(2)
        return (np.random.default_rng(env_ss).random(T),
                np.random.default_rng(col_ss).random(T))
    u = np.random.default_rng(seed).random(2 * T).reshape(T, 2)
    return u[:, 0], u[:, 1]


def play_game(
    env: CouponEnvironment,
    collector,
    T: int,
    seed: int = 0,
    matrix: LossMatrix | None = None,
    split_streams: bool = True,
) -> GameLog:
    """Play T rounds. The collector only ever receives the observable History;
    the type-aware oracle is the one exception, being handed the novelty flag."""
    from .collectors import Oracle  # circular at module level

    if T < 1:
        raise ValueError("T must be >= 1")
    matrix = matrix or LossMatrix()
    if isinstance(env, Scripted) and len(env.sequence) < T:
        raise ValueError(f"scripted sequence has {len(env.sequence)} rounds, need {T}")
    u_env, u_col = _streams(seed, split_streams, T)
    collector.reset(T)

    oblivious = hasattr(collector, "probe_mask")
    if not isinstance(env, Adversarial) and (oblivious or isinstance(collector, Oracle)):
        types = env.types_from_uniforms(u_env) if isinstance(env, Stochastic) \
            else np.asarray(env.sequence[:T], dtype=np.int64)
        if isinstance(collector, Oracle):
            probes = _first_occurrence(types)
            novel = probes.copy()
        else:
            probes = collector.probe_mask(np.arange(1, T + 1), u_col)
            novel = _novelty(types, probes)
        return GameLog(types.astype(np.int64), probes, novel, _losses(matrix, probes, novel),
                       seed, matrix)

    types = np.empty(T, dtype=np.int64)
    probes = np.empty(T, dtype=bool)
    novel = np.empty(T, dtype=bool)
    losses = np.empty(T)
    history = History()
    discovered: set[int] = set()
    for i in range(T):
        t = i + 1
        if isinstance(env, Adversarial):
            m = int(env.rule(history))
        elif isinstance(env, Stochastic):
            m = int(env.types_from_uniforms(np.array([u_env[i]]))[0])
        else:
            m = env.sequence[i]
        is_novel = m not in discovered
        if isinstance(collector, Oracle):
            a = oracle_act(is_novel)
        else:
            a = collector.act(t, history, float(u_col[i]))
        loss = loss_of(matrix, a, is_novel)
        if a is Action.PROBE:
            discovered.add(m)
        types[i], probes[i], novel[i], losses[i] = m, a is Action.PROBE, is_novel, loss
        history.append(a, m, loss)
    return GameLog(types, probes, novel, losses, seed, matrix)


def oracle_act(novel: bool) -> Action:
    return Action.PROBE if novel else Action.SKIP


def _novelty(types: np.ndarray, probes: np.ndarray) -> np.ndarray:
    """novel[t] is True iff types[t] was not probed in any earlier round."""
    T = len(types)
    n_types = int(types.max()) + 1 if T else 0
    first_probe = np.full(n_types, T, dtype=np.int64)
    idx = np.flatnonzero(probes)
    # np.minimum.at keeps the earliest probe per type
    np.minimum.at(first_probe, types[idx], idx)
    return np.arange(T) <= first_probe[types]
