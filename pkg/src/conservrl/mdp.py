# Finite-horizon tabular MDPs: exact DP oracles, rollout sampling, assumption checkers.
#
# Time indexing: arrays are indexed by step t = 0..H-1.  The final step (t = H-1)
# carries V = Q = 0, so an episode of H steps only earns reward on its first H-1
# steps.  A single-state MDP with R = 0.5 and H = 3 therefore has V[0] = 1.0,
# V[1] = 0.5, V[2] = 0.  Every value in this package follows that convention,
# including realized returns used for regret.
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterator, NamedTuple, Sequence

import numpy as np

PROB_TOL = 1e-9
DEFAULT_HITTING_CAP = 10_000


class ConfigurationError(ValueError):
    """Dimensions or parameters that do not fit together."""


class ContractViolation(RuntimeError):
    """A callback broke its contract (e.g. returned an invalid action)."""


@dataclass(frozen=True, eq=False)
class TabularMdp:
    P: np.ndarray  # (S, A, S) transition probabilities
    R: np.ndarray  # (S, A) expected rewards in [0, 1]
    H: int
    s1: int = 0

    def __post_init__(self):
        P = np.array(self.P, dtype=float)
        R = np.array(self.R, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ConfigurationError(f"P must have shape (S, A, S), got {P.shape}")
        if R.shape != P.shape[:2]:
            raise ConfigurationError(f"R must have shape {P.shape[:2]}, got {R.shape}")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=2) - 1.0) > PROB_TOL):
            raise ConfigurationError("every row P[s, a, :] must be a probability vector")
        if np.any(R < 0) or np.any(R > 1):
            raise ConfigurationError("rewards must lie in [0, 1]")
        if int(self.H) < 2:
            raise ConfigurationError(f"horizon must be >= 2, got {self.H}")
        if not 0 <= int(self.s1) < P.shape[0]:
            raise ConfigurationError(f"initial state {self.s1} out of range")
        P.flags.writeable = False
        R.flags.writeable = False
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "H", int(self.H))
        object.__setattr__(self, "s1", int(self.s1))

    @property
    def S(self) -> int:
        return self.P.shape[0]

    @property
    def A(self) -> int:
        return self.P.shape[1]

    @cached_property
    def cdf(self) -> np.ndarray:
        c = np.cumsum(self.P, axis=2)
        c[..., -1] = 1.0
        c.flags.writeable = False
        return c

    def to_dict(self) -> dict:
        return {
            "S": self.S,
            "A": self.A,
            "H": self.H,
            "s1": self.s1,
            "P": self.P.tolist(),
            "R": self.R.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TabularMdp":
        mdp = cls(P=np.asarray(d["P"], dtype=float), R=np.asarray(d["R"], dtype=float), H=d["H"], s1=d.get("s1", 0))
        if "S" in d and d["S"] != mdp.S or "A" in d and d["A"] != mdp.A:
            raise ConfigurationError("declared S/A do not match the P tensor")
        return mdp

    def to_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f)

    @classmethod
    def from_json(cls, path) -> "TabularMdp":
        with open(path) as f:
            return cls.from_dict(json.load(f))


class Transition(NamedTuple):
    t: int
    s: int
    a: int
    r: float
    s_next: int


@dataclass
class Rollout:
    """One episode of exactly H steps, stored column-wise.

    ``next_states`` is recorded for every step including the last one; the
    meta-episode controller needs the post-step state as its next target.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    episode_index: int = 0
    annotations: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.states)

    @property
    def steps(self) -> list[Transition]:
        return list(self)

    def __iter__(self) -> Iterator[Transition]:
        for t in range(len(self.states)):
            yield Transition(t, int(self.states[t]), int(self.actions[t]), float(self.rewards[t]), int(self.next_states[t]))

    def ret(self) -> float:
        """Realized return, excluding the rewardless final step."""
        return float(self.rewards[:-1].sum())


def _check_policy(mdp: TabularMdp, policy: np.ndarray) -> np.ndarray:
    policy = np.asarray(policy)
    if policy.shape != (mdp.H, mdp.S):
        raise ConfigurationError(f"policy shape {policy.shape} does not match (H, S) = {(mdp.H, mdp.S)}")
    if np.any(policy < 0) or np.any(policy >= mdp.A):
        raise ConfigurationError("policy contains invalid action indices")
    return policy.astype(int)


def exact_policy_eval(mdp: TabularMdp, policy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (V, Q) of a deterministic time-indexed policy, shapes (H, S) and (H, S, A)."""
    policy = _check_policy(mdp, policy)
    H, S, A = mdp.H, mdp.S, mdp.A
    V = np.zeros((H, S))
    Q = np.zeros((H, S, A))
    idx = np.arange(S)
    for t in range(H - 2, -1, -1):
        Q[t] = mdp.R + mdp.P @ V[t + 1]
        V[t] = Q[t, idx, policy[t]]
    return V, Q


def exact_optimal(mdp: TabularMdp) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bellman-optimal (V*, Q*, pi*); ties go to the lowest action index."""
    H, S, A = mdp.H, mdp.S, mdp.A
    V = np.zeros((H, S))
    Q = np.zeros((H, S, A))
    pi = np.zeros((H, S), dtype=int)
    for t in range(H - 2, -1, -1):
        Q[t] = mdp.R + mdp.P @ V[t + 1]
        pi[t] = Q[t].argmax(axis=1)
        V[t] = Q[t].max(axis=1)
    return V, Q, pi


ActFn = Callable[[int, int, Sequence[Transition]], int]


def sample_rollout(mdp: TabularMdp, act: ActFn, rng: np.random.Generator, episode_index: int = 0) -> Rollout:
    """Simulate H steps; ``act(t, state, history)`` picks each action."""
    H = mdp.H
    states = np.empty(H, dtype=int)
    actions = np.empty(H, dtype=int)
    rewards = np.empty(H)
    next_states = np.empty(H, dtype=int)
    history: list[Transition] = []
    u = rng.random(H)
    cdf = mdp.cdf
    s = mdp.s1
    for t in range(H):
        a = act(t, s, history)
        if not (isinstance(a, (int, np.integer)) and 0 <= a < mdp.A):
            raise ContractViolation(f"action {a!r} returned at step {t} is not in [0, {mdp.A})")
        a = int(a)
        s_next = int(np.searchsorted(cdf[s, a], u[t], side="right"))
        r = float(mdp.R[s, a])
        states[t], actions[t], rewards[t], next_states[t] = s, a, r, s_next
        history.append(Transition(t, s, a, r, s_next))
        s = s_next
    return Rollout(states, actions, rewards, next_states, episode_index=episode_index)


def policy_actor(policy: np.ndarray) -> ActFn:
    return lambda t, s, _history: int(policy[t, s])


def max_expected_hitting_time(mdp: TabularMdp, target: int, cap: int = DEFAULT_HITTING_CAP, tol: float = 1e-10) -> float:
    """Worst-case (over deterministic policies) expected time to reach ``target``.

    Maximized over start states other than the target.  Returns ``math.inf``
    when value iteration fails to settle within ``cap`` sweeps, which happens
    when some policy can avoid the target forever.
    """
    if not 0 <= target < mdp.S:
        raise ConfigurationError(f"target {target} out of range")
    if mdp.S == 1:
        return 0.0
    U = np.zeros(mdp.S)
    for _ in range(cap):
        new = 1.0 + (mdp.P @ U).max(axis=1)
        new[target] = 0.0
        if np.max(np.abs(new - U)) <= tol * max(1.0, np.max(new)):
            U = new
            break
        U = new
    else:
        return math.inf
    return float(np.delete(U, target).max())


def worst_case_diameter(mdp: TabularMdp, cap: int = DEFAULT_HITTING_CAP) -> float:
    """Maximum over targets of :func:`max_expected_hitting_time`."""
    return max(max_expected_hitting_time(mdp, s, cap) for s in range(mdp.S))


def policy_gap(mdp: TabularMdp, policy: np.ndarray) -> float:
    """Largest one-step deviation cost max_{t,s,a} V_t(s) - Q_t(s, a).

    A budget eta is compatible with single-step exploration from this policy
    when ``policy_gap <= eta / 2``.
    """
    V, Q = exact_policy_eval(mdp, policy)
    return float(np.max(V[:, :, None] - Q))
