# Benchmark MDP builders and warm-start data.
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .mdp import ConfigurationError, Rollout, TabularMdp, max_expected_hitting_time, sample_rollout


@dataclass(frozen=True)
class InventoryParams:
    capacity: int = 5
    fixed_order_cost: float = 2.0
    unit_order_cost: float = 2.0
    holding_cost: float = 1.0
    revenue: float = 8.0
    demand_max: int | None = None  # None -> capacity
    horizon: int = 20
    initial_state: int = 0

    def __post_init__(self):
        if self.capacity < 1:
            raise ConfigurationError("capacity must be >= 1")
        if min(self.fixed_order_cost, self.unit_order_cost, self.holding_cost, self.revenue) < 0:
            raise ConfigurationError("costs and revenue must be nonnegative")
        if self.demand_max is not None and self.demand_max < 1:
            raise ConfigurationError("demand_max must be >= 1")
        if not 0 <= self.initial_state <= self.capacity:
            raise ConfigurationError("initial_state must be an inventory level")

    @property
    def demand_support(self) -> int:
        return self.capacity if self.demand_max is None else self.demand_max


def order_cost(p: InventoryParams, u: int) -> float:
    return p.fixed_order_cost + p.unit_order_cost * u if u > 0 else 0.0


def inventory_raw_reward(p: InventoryParams, s: int, a: int, demand: int) -> tuple[int, float]:
    """Next inventory level and unnormalized profit for one month.

    ``a`` is clamped to the remaining capacity before anything else.
    """
    a = min(a, p.capacity - s)
    stock = s + a
    s_next = max(0, stock - demand)
    sold = stock - s_next
    r = -order_cost(p, a) - p.holding_cost * stock + p.revenue * sold
    return s_next, r


def inventory_reward_range(p: InventoryParams) -> tuple[float, float]:
    rs = [
        inventory_raw_reward(p, s, a, d)[1]
        for s in range(p.capacity + 1)
        for a in range(p.capacity - s + 1)
        for d in range(p.demand_support + 1)
    ]
    return min(rs), max(rs)


def build_inventory_mdp(params: InventoryParams = InventoryParams()) -> TabularMdp:
    """Single-product inventory control with uniform demand on {0..demand_max}.

    States are stock levels 0..M and actions order quantities 0..M; orders
    beyond capacity are clamped.  ``R[s, a]`` is the demand-expectation of the
    profit mapped affinely onto [0, 1].
    """
    M = params.capacity
    n = M + 1
    lo, hi = inventory_reward_range(params)
    span = hi - lo if hi > lo else 1.0
    demands = range(params.demand_support + 1)
    pd = 1.0 / len(demands)
    P = np.zeros((n, n, n))
    R = np.zeros((n, n))
    for s in range(n):
        for a in range(n):
            for d in demands:
                s_next, r = inventory_raw_reward(params, s, a, d)
                P[s, a, s_next] += pd
                R[s, a] += pd * (r - lo) / span
    return TabularMdp(P=P, R=np.clip(R, 0.0, 1.0), H=params.horizon, s1=params.initial_state)


@dataclass(frozen=True)
class RandomMdpParams:
    S: int = 5
    A: int = 2
    H: int = 20
    min_transition_prob: float = 0.02
    seed: int = 0
    dirichlet_alpha: float = 5.0
    max_retries: int = 100
    require_ergodic: bool = True  # retry until worst-case diameter <= H/2

    def __post_init__(self):
        if self.S < 1 or self.A < 1 or self.H < 2:
            raise ConfigurationError("need S >= 1, A >= 1, H >= 2")
        if not 0 <= self.min_transition_prob * self.S <= 1:
            raise ConfigurationError("min_transition_prob * S must lie in [0, 1]")


class GenerationError(RuntimeError):
    pass


def build_random_ergodic_mdp(params: RandomMdpParams = RandomMdpParams()) -> TabularMdp:
    """Dirichlet transitions floored at ``min_transition_prob``, uniform rewards.

    Draws are retried with seeds spawned from ``params.seed`` until every
    target has worst-case expected hitting time <= H/2, unless
    ``require_ergodic`` is off, in which case the first draw is returned.
    """
    children = np.random.SeedSequence(params.seed).spawn(params.max_retries)
    S, A = params.S, params.A
    for child in children:
        rng = np.random.default_rng(child)
        P = rng.dirichlet(np.full(S, params.dirichlet_alpha), size=(S, A))
        P = np.maximum(P, params.min_transition_prob)
        P /= P.sum(axis=2, keepdims=True)
        R = rng.random((S, A))
        mdp = TabularMdp(P=P, R=R, H=params.H, s1=0)
        if not params.require_ergodic:
            return mdp
        if all(max_expected_hitting_time(mdp, s) <= params.H / 2 for s in range(S)):
            return mdp
    raise GenerationError(f"no ergodic draw within {params.max_retries} retries for {params}")


def _uniform_actor(A: int, rng: np.random.Generator):
    return lambda t, s, _h: int(rng.integers(A))


def warm_start_dataset(mdp: TabularMdp, n_episodes: int, rng: np.random.Generator) -> list[Rollout]:
    """Episodes collected by the uniform-random policy."""
    if n_episodes < 0:
        raise ConfigurationError("n_episodes must be >= 0")
    act = _uniform_actor(mdp.A, rng)
    return [sample_rollout(mdp, act, rng, episode_index=-(i + 1)) for i in range(n_episodes)]


ENV_KINDS = {"inventory": InventoryParams, "random_ergodic": RandomMdpParams}


def env_params_from_spec(spec: dict):
    kind = spec.get("kind")
    if kind not in ENV_KINDS:
        raise ConfigurationError(f"unknown env kind {kind!r}; expected one of {sorted(ENV_KINDS)}")
    cls = ENV_KINDS[kind]
    names = {f.name for f in fields(cls)}
    extra = set(spec) - names - {"kind"}
    if extra:
        raise ConfigurationError(f"unknown {kind} parameters: {sorted(extra)}")
    return cls(**{k: v for k, v in spec.items() if k != "kind"})


def build_env(spec: dict) -> TabularMdp:
    """Build an MDP from ``{"kind": "inventory" | "random_ergodic", ...params}``.

    A spec with ``"kind": "tabular"`` carries the MDP itself in the mdp JSON format.
    """
    if spec.get("kind") == "tabular" or ("P" in spec and "R" in spec):
        return TabularMdp.from_dict(spec)
    params = env_params_from_spec(spec)
    if isinstance(params, InventoryParams):
        return build_inventory_mdp(params)
    return build_random_ergodic_mdp(params)


def env_spec_for(params) -> dict:
    kind = "inventory" if isinstance(params, InventoryParams) else "random_ergodic"
    return {"kind": kind, **asdict(params)}
