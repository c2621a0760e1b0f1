"""Empirical models with confidence radii, the new-vs-known test and the library."""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from . import _kernels
from .explore import ExploreState


@dataclass(frozen=True)
class RadiusMeta:
    """Inputs of the concentration radii.

    The log term is ln(4SAT/delta) unless `delta_pair` is given, in which case
    it is ln(2/delta_pair), the per-pair allocation. `reward_scale` multiplies
    the reward radius (range of the reward noise; 1 for Bernoulli rewards).
    """

    S: int
    A: int
    N: int
    T: int
    delta: float
    delta_pair: float | None = None
    reward_scale: float = 1.0

    @property
    def log_term(self) -> float:
        if self.delta_pair is not None:
            return math.log(2.0 / self.delta_pair)
        return math.log(4.0 * self.S * self.A * self.T / self.delta)


def confidence_radii(n, meta: RadiusMeta):
    """(eps_T, eps_R) for count(s) n; +inf where n == 0. Works on scalars and arrays."""
    n_arr = np.asarray(n, dtype=float)
    if np.any(n_arr < 0):
        raise ValueError("counts must be non-negative")
    with np.errstate(divide="ignore"):
        inv = np.where(n_arr > 0, 1.0 / np.maximum(n_arr, 1e-300), np.inf)
    eps_T = np.sqrt(8.0 * meta.N * inv * meta.log_term)
    eps_R = meta.reward_scale * np.sqrt(2.0 * inv * meta.log_term)
    if eps_T.ndim == 0:
        return float(eps_T), float(eps_R)
    return eps_T, eps_R


def calibrate_m(gamma_sep: float, meta: RadiusMeta, rule: str = "reward") -> int:
    """Smallest m whose radii separate models that differ by gamma_sep.

    rule="reward": eps_R(m) < gamma_sep / 3 (the reward channel carries the
    separation in every shipped family). rule="strict": additionally
    eps_T(m) < gamma_sep / 3 and eps_R(m) < gamma_sep / (6 sqrt(N)).
    """
    L = meta.log_term
    if rule == "reward":
        bound = 2.0 * L * (3.0 * meta.reward_scale / gamma_sep) ** 2
    elif rule == "strict":
        bound = max(8.0 * meta.N * L * (3.0 / gamma_sep) ** 2,
                    2.0 * L * (6.0 * math.sqrt(meta.N) * meta.reward_scale / gamma_sep) ** 2)
    else:
        raise ValueError(f"unknown rule {rule!r}")
    m = max(1, math.floor(bound))
    while not _separates(m, gamma_sep, meta, rule):
        m += 1
    return m


def _separates(m, gamma_sep, meta, rule):
    eT, eR = confidence_radii(m, meta)
    if rule == "reward":
        return eR < gamma_sep / 3
    return eT < gamma_sep / 3 and eR < gamma_sep / (6 * math.sqrt(meta.N))


def lemma2_m(N: int, S: int, A: int, T: int, delta: float, gamma_sep: float, D: float) -> int:
    """Visits per pair that make discovery reliable with the theoretical constants."""
    return math.ceil(72 * N * math.log(4 * S * A * T / delta) * max(gamma_sep ** -2, D ** 2))


# ---------------------------------------------------------------------------
# Estimates and library

@dataclass(frozen=True, eq=False)
class ModelEstimate:
    counts: np.ndarray  # (S, A)
    trans: np.ndarray  # (S, A, S) next-state counts
    rew_sum: np.ndarray  # (S, A)
    meta: RadiusMeta

    @classmethod
    def from_state(cls, state: ExploreState, meta: RadiusMeta) -> "ModelEstimate":
        return cls(state.counts.copy(), state.trans.copy(), state.rew_sum.copy(), meta)

    @cached_property
    def P_hat(self) -> np.ndarray:
        return self.trans / np.maximum(self.counts, 1)[..., None]

    @cached_property
    def R_hat(self) -> np.ndarray:
        return self.rew_sum / np.maximum(self.counts, 1)

    @cached_property
    def sparse(self):
        """Successor lists of P_hat for the compiled planners."""
        return _kernels.sparse_rows(self.P_hat)

    @property
    def complete(self) -> bool:
        return bool((self.counts >= 1).all())

    def radii(self):
        return confidence_radii(self.counts, self.meta)

    def to_dict(self) -> dict:
        return {"counts": self.counts.tolist(), "P_hat": self.P_hat.tolist(),
                "R_hat": self.R_hat.tolist(), "meta": self.meta.__dict__.copy()}


@dataclass
class LibraryEntry:
    id: int
    estimate: ModelEstimate


@dataclass
class ModelLibrary:
    entries: list[LibraryEntry] = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    @property
    def ids(self) -> list[int]:
        return [e.id for e in self.entries]

    def add(self, estimate: ModelEstimate) -> int:
        new_id = len(self.entries)
        self.entries.append(LibraryEntry(new_id, estimate))
        return new_id

    def __getitem__(self, model_id: int) -> ModelEstimate:
        return self.entries[model_id].estimate

    def to_json(self) -> str:
        return json.dumps([{"id": e.id, **e.estimate.to_dict()} for e in self.entries])

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())


def overlap_mask(e1: ModelEstimate, e2: ModelEstimate) -> np.ndarray:
    """(S, A) bool: confidence regions intersect. Pairs missing data count as overlapping."""
    t1, r1 = e1.radii()
    t2, r2 = e2.radii()
    dT = np.abs(e1.P_hat - e2.P_hat).sum(axis=2)
    dR = np.abs(e1.R_hat - e2.R_hat)
    with np.errstate(invalid="ignore"):
        ok = (dT <= t1 + t2) & (dR <= r1 + r2)
    missing = (e1.counts == 0) | (e2.counts == 0)
    return ok | missing


def overlap_at(e1: ModelEstimate, e2: ModelEstimate, s: int, a: int) -> bool:
    if e1.counts[s, a] == 0 or e2.counts[s, a] == 0:
        return True
    t1, r1 = confidence_radii(e1.counts[s, a], e1.meta)
    t2, r2 = confidence_radii(e2.counts[s, a], e2.meta)
    dT = float(np.abs(e1.P_hat[s, a] - e2.P_hat[s, a]).sum())
    dR = abs(float(e1.R_hat[s, a] - e2.R_hat[s, a]))
    return dT <= t1 + t2 and dR <= r1 + r2


class Verdict(enum.Enum):
    NEW = "new"
    MATCH = "match"
    AMBIGUOUS = "ambiguous"


@dataclass(frozen=True)
class Classification:
    verdict: Verdict
    ids: tuple[int, ...] = ()  # overlapping entries, ascending

    @property
    def model_id(self) -> int | None:
        """Library id used downstream: lowest overlapping id, None when new."""
        return self.ids[0] if self.ids else None

    def __str__(self):
        if self.verdict is Verdict.NEW:
            return "New"
        if self.verdict is Verdict.MATCH:
            return f"Match({self.ids[0]})"
        return "Ambiguous(" + ";".join(map(str, self.ids)) + ")"


def classify_model(e: ModelEstimate, lib: ModelLibrary) -> Classification:
    hits = tuple(entry.id for entry in lib.entries if overlap_mask(e, entry.estimate).all())
    if not hits:
        return Classification(Verdict.NEW)
    if len(hits) == 1:
        return Classification(Verdict.MATCH, hits)
    return Classification(Verdict.AMBIGUOUS, hits)


def merge_into_library(lib: ModelLibrary, model_id: int, e: ModelEstimate) -> ModelLibrary:
    """Pool e's samples into entry model_id (in place; returns lib)."""
    if not 0 <= model_id < len(lib):
        raise ValueError(f"no library entry with id {model_id}")
    old = lib.entries[model_id].estimate
    lib.entries[model_id].estimate = replace(
        old, counts=old.counts + e.counts, trans=old.trans + e.trans, rew_sum=old.rew_sum + e.rew_sum)
    return lib
