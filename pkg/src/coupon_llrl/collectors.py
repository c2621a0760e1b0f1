"""Collector strategies for the coupon game and their closed-form guarantees."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .occp import Action, History, LossMatrix, oracle_act

__all__ = [
    "ExpFirst", "ForcedExp", "Oracle", "HighProb", "Expected", "BoundReport",
    "expfirst_probe_budget", "expfirst_act", "forcedexp_rate", "forcedexp_act",
    "forcedexp_bounds", "prop1_bounds", "oracle_act", "write_bounds_csv",
]


# ---------------------------------------------------------------------------
# Policies

@dataclass
class ExpFirst:
    """Probe the first E rounds, skip afterwards."""

    E: int

    def __post_init__(self):
        if self.E < 0:
            raise ValueError("E must be >= 0")

    def reset(self, T: int) -> None:
        pass

    def act(self, t: int, history: History, u: float = 0.0) -> Action:
        return expfirst_act(t, self.E)

    def probe_mask(self, t: np.ndarray, u: np.ndarray) -> np.ndarray:
        return t <= self.E


@dataclass
class ForcedExp:
    """Probe round t with probability t**-alpha, regardless of history."""

    alpha: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")

    def reset(self, T: int) -> None:
        pass

    def act(self, t: int, history: History, u: float) -> Action:
        return Action.PROBE if u < forcedexp_rate(t, self.alpha) else Action.SKIP

    def probe_mask(self, t: np.ndarray, u: np.ndarray) -> np.ndarray:
        return u < np.power(t.astype(float), -self.alpha)


class Oracle:
    """Type-aware benchmark; the game harness feeds it the novelty flag."""

    def reset(self, T: int) -> None:
        pass

    def __repr__(self):
        return "Oracle()"


def expfirst_act(t: int, E: int) -> Action:
    return Action.PROBE if t <= E else Action.SKIP


def forcedexp_rate(t: int, alpha: float) -> float:
    return float(t) ** (-alpha)


def forcedexp_act(t: int, alpha: float, rng: np.random.Generator) -> Action:
    return Action.PROBE if rng.random() < forcedexp_rate(t, alpha) else Action.SKIP


# ---------------------------------------------------------------------------
# Probe budgets and regret bounds

@dataclass(frozen=True)
class HighProb:
    delta: float


@dataclass(frozen=True)
class Expected:
    T: int
    matrix: LossMatrix


@dataclass(frozen=True)
class BoundReport:
    hp_regret: float
    expected_regret: float
    delta: float


def expfirst_probe_budget(mu_m: float, mode: HighProb | Expected) -> int:
    """Rounds ExpFirst must probe so every type with mass >= mu_m shows up."""
    if not 0.0 < mu_m <= 1.0:
        raise ValueError("mu_m must lie in (0, 1]")
    if isinstance(mode, HighProb):
        arg = 1.0 / (mu_m * mode.delta)
    else:
        m = mode.matrix
        arg = (m.rho3 - m.rho0) * mode.T / (m.rho1 - m.rho0)
    if arg <= 1.0:
        return 0
    return math.ceil(math.log(arg) / mu_m)


def prop1_bounds(mu_m: float, matrix: LossMatrix, T: int, delta: float) -> BoundReport:
    premium = (matrix.rho1 - matrix.rho0) / mu_m
    hp = premium * math.log(1.0 / (mu_m * delta))
    expected = premium * (math.log((matrix.rho3 - matrix.rho0) * T / (matrix.rho1 - matrix.rho0)) + 1.0)
    return BoundReport(hp, expected, delta)


def forcedexp_bounds(c_star: int, matrix: LossMatrix, T: int, alpha: float, delta: float) -> BoundReport:
    if c_star < 1:
        raise ValueError("c_star must be >= 1")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    hp = c_star * matrix.rho3 * (T ** alpha * math.log(c_star / delta) + 1.0)
    expected = c_star * matrix.rho3 * T ** alpha + matrix.rho1 / (1.0 - alpha) * T ** (1.0 - alpha)
    return BoundReport(hp, expected, delta)


def write_bounds_csv(rows, path) -> None:
    """rows: iterables of (algo, T, alpha_or_E, delta, BoundReport)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["algo", "T", "alpha_or_E", "delta", "hp_bound", "expected_bound"])
        for algo, T, param, delta, rep in rows:
            w.writerow([algo, T, param, delta, f"{rep.hp_regret:.9g}", f"{rep.expected_regret:.9g}"])
