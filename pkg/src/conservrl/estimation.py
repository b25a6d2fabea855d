# Sufficient statistics, empirical model, and the Hoeffding-style exploration bonus.
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mdp import Rollout, Transition


@dataclass
class Counts:
    visits: np.ndarray  # (S, A) int
    next_counts: np.ndarray  # (S, A, S) int
    reward_sum: np.ndarray  # (S, A) float

    @classmethod
    def zeros(cls, S: int, A: int) -> "Counts":
        return cls(np.zeros((S, A), dtype=np.int64), np.zeros((S, A, S), dtype=np.int64), np.zeros((S, A)))

    @property
    def S(self) -> int:
        return self.visits.shape[0]

    @property
    def A(self) -> int:
        return self.visits.shape[1]

    @property
    def total(self) -> int:
        return int(self.visits.sum())

    def update(self, step: Transition) -> None:
        self.visits[step.s, step.a] += 1
        self.next_counts[step.s, step.a, step.s_next] += 1
        self.reward_sum[step.s, step.a] += step.r

    def update_many(self, states, actions, rewards, next_states) -> None:
        np.add.at(self.visits, (states, actions), 1)
        np.add.at(self.next_counts, (states, actions, next_states), 1)
        np.add.at(self.reward_sum, (states, actions), rewards)

    def add_rollout(self, rollout: Rollout, mask=None) -> None:
        if mask is None:
            mask = slice(None)
        self.update_many(rollout.states[mask], rollout.actions[mask], rollout.rewards[mask], rollout.next_states[mask])

    def copy(self) -> "Counts":
        return Counts(self.visits.copy(), self.next_counts.copy(), self.reward_sum.copy())

    def to_dict(self) -> dict:
        return {
            "visits": self.visits.tolist(),
            "next_counts": self.next_counts.tolist(),
            "reward_sum": self.reward_sum.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Counts":
        c = cls(
            np.asarray(d["visits"], dtype=np.int64),
            np.asarray(d["next_counts"], dtype=np.int64),
            np.asarray(d["reward_sum"], dtype=float),
        )
        if not np.array_equal(c.next_counts.sum(axis=2), c.visits):
            raise ValueError("next_counts do not sum to visits")
        return c


def update(counts: Counts, step: Transition) -> Counts:
    """Functional form of :meth:`Counts.update`; leaves ``counts`` untouched."""
    out = counts.copy()
    out.update(step)
    return out


@dataclass(frozen=True)
class EmpiricalModel:
    p_hat: np.ndarray  # (S, A, S)
    r_hat: np.ndarray  # (S, A)


def empirical_model(counts: Counts) -> EmpiricalModel:
    """Sample-average model.  Unvisited pairs get a uniform next-state row and zero reward."""
    n = counts.visits[..., None]
    S = counts.S
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.where(n > 0, counts.next_counts / np.maximum(n, 1), 1.0 / S)
        r = np.where(counts.visits > 0, counts.reward_sum / np.maximum(counts.visits, 1), 0.0)
    return EmpiricalModel(p_hat=p, r_hat=np.clip(r, 0.0, 1.0))


@dataclass(frozen=True)
class BonusParams:
    S: int
    A: int
    H: int
    delta: float = 0.1
    planned_total_episodes: int = 1
    scale: float = 1.0  # multiplies the bonus; 1.0 is the textbook constant

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.planned_total_episodes < 1:
            raise ValueError("planned_total_episodes must be >= 1")
        if self.scale < 0:
            raise ValueError("scale must be nonnegative")


def log_term(params: BonusParams) -> float:
    return math.log(5 * params.S * params.A * params.H * params.planned_total_episodes / params.delta)


def bonus_value(n, params: BonusParams, L: float | None = None):
    """4 H sqrt(S L / max(1, n)), times ``params.scale``; vectorized over ``n``."""
    if L is None:
        L = log_term(params)
    return params.scale * 4.0 * params.H * np.sqrt(params.S * L / np.maximum(1, n))


def bonus(s: int, a: int, counts: Counts, params: BonusParams, L: float | None = None) -> float:
    return float(bonus_value(counts.visits[s, a], params, L))


def bonus_matrix(counts: Counts, params: BonusParams, L: float | None = None) -> np.ndarray:
    return bonus_value(counts.visits, params, L)
