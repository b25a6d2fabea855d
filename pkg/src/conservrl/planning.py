# Optimistic, conservative, and optimistic-evaluation value iteration on an empirical model.
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estimation import BonusParams, Counts, EmpiricalModel, bonus_matrix


@dataclass(frozen=True)
class PlannerOutput:
    q: np.ndarray  # (H, S, A)
    v: np.ndarray  # (H, S)
    policy: np.ndarray  # (H, S) int


@dataclass(frozen=True)
class EvalOutput:
    q: np.ndarray
    v: np.ndarray


def backward_induction(
    r: np.ndarray,
    p: np.ndarray,
    H: int,
    gamma: float = 1.0,
    clip: bool = True,
    policy: np.ndarray | None = None,
):
    """Finite-horizon DP on reward ``r`` (S, A) and transitions ``p`` (S, A, S).

    Optimizes (greedy, lowest-index ties) unless ``policy`` is given, in which
    case it evaluates that policy.  With ``clip`` every Q and V entry is kept in
    [0, H].  The final step is zero by convention.
    """
    S, A = r.shape
    q = np.zeros((H, S, A))
    v = np.zeros((H, S))
    pi = np.zeros((H, S), dtype=int) if policy is None else np.asarray(policy, dtype=int)
    idx = np.arange(S)
    p2 = p.reshape(S * A, S)
    for t in range(H - 2, -1, -1):
        qt = r + gamma * (p2 @ v[t + 1]).reshape(S, A)
        if clip:
            np.clip(qt, 0.0, H, out=qt)
        q[t] = qt
        if policy is None:
            pi[t] = qt.argmax(axis=1)
        v[t] = qt[idx, pi[t]]
    return q, v, pi


def _bonus(counts: Counts, params: BonusParams, bonus):
    if bonus is None:
        return bonus_matrix(counts, params)
    return np.broadcast_to(np.asarray(bonus, dtype=float), counts.visits.shape)


def optimistic_plan(
    model: EmpiricalModel,
    counts: Counts,
    params: BonusParams,
    gamma: float = 1.0,
    clip: bool = True,
    bonus=None,
) -> PlannerOutput:
    """UCB value iteration on R_hat + b.  ``bonus`` overrides the computed bonus matrix."""
    b = _bonus(counts, params, bonus)
    q, v, pi = backward_induction(model.r_hat + b, model.p_hat, params.H, gamma, clip)
    return PlannerOutput(q, v, pi)


def conservative_plan(
    model: EmpiricalModel,
    counts: Counts,
    params: BonusParams,
    gamma: float = 1.0,
    clip: bool = True,
    bonus=None,
) -> PlannerOutput:
    """Pessimistic value iteration on R_hat - b; its greedy policy is the baseline."""
    b = _bonus(counts, params, bonus)
    q, v, pi = backward_induction(model.r_hat - b, model.p_hat, params.H, gamma, clip)
    return PlannerOutput(q, v, pi)


def optimistic_eval(
    model: EmpiricalModel,
    counts: Counts,
    params: BonusParams,
    policy: np.ndarray,
    gamma: float = 1.0,
    clip: bool = True,
    bonus=None,
) -> EvalOutput:
    """Upper bound on the value of ``policy``: policy evaluation on R_hat + b."""
    b = _bonus(counts, params, bonus)
    q, v, _ = backward_induction(model.r_hat + b, model.p_hat, params.H, gamma, clip, policy=policy)
    return EvalOutput(q, v)
