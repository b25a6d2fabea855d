# The uniformly conservative agent: a shield that mixes the UCB policy with the
# pessimistic baseline under a per-episode deficit budget, and stitches the UCB
# fragments of several episodes into H-step meta-rollouts.
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .estimation import BonusParams, Counts, empirical_model
from .mdp import Rollout, TabularMdp, exact_optimal, exact_policy_eval, sample_rollout, policy_actor
from .metrics import EpisodeRecord, MetricsLog
from .planning import EvalOutput, conservative_plan, optimistic_eval, optimistic_plan

AGENT_KINDS = ("unif_conserv_ucbvi", "ucbvi", "baseline_only")


class MetaEpisodeAbort(RuntimeError):
    """A meta-episode needed more episodes than allowed; the target state is
    probably not reachable often enough (ergodicity assumption violated)."""


@dataclass(frozen=True)
class AgentConfig:
    eta: float = 0.1
    delta: float = 0.1
    strict_gate: bool = False
    use_full_data_for_ucb: bool = False
    max_episodes_per_meta: int | None = None
    gamma: float = 1.0
    clipping: bool = True
    literal_eq4: bool = False
    bonus_scale: float = 1.0
    ucb_time_index: str = "meta"  # "meta": pi_hat indexed by meta-step; "episode": by real step

    def __post_init__(self):
        if self.ucb_time_index not in ("meta", "episode"):
            raise ValueError("ucb_time_index must be 'meta' or 'episode'")
        if not self.eta > 0:
            raise ValueError("eta must be > 0")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.max_episodes_per_meta is not None and self.max_episodes_per_meta < 1:
            raise ValueError("max_episodes_per_meta must be >= 1")

    @property
    def episode_cap(self) -> int:
        if self.max_episodes_per_meta is not None:
            return self.max_episodes_per_meta
        return 20 * math.ceil(6 * math.log(1 / self.delta))

    def bonus_params(self, mdp: TabularMdp, planned_total_episodes: int) -> BonusParams:
        return BonusParams(mdp.S, mdp.A, mdp.H, self.delta, max(1, planned_total_episodes), self.bonus_scale)


@dataclass(frozen=True)
class InternalState:
    target: int | None
    zeta: float = 0.0


def init_internal(n: int, target: int | None, s1: int = 0) -> InternalState:
    """Episode 1 of a meta-episode targets the initial state; later ones the recorded target."""
    if n <= 1:
        return InternalState(s1, 0.0)
    if target is None:
        raise ValueError("episodes after the first need a target state")
    return InternalState(int(target), 0.0)


def sigma_update(z: InternalState, s: int, a: int, vhat: EvalOutput, qbar: np.ndarray, t: int) -> InternalState:
    """Hold (target, 0) until the target is visited, then accrue V_hat - Q_bar."""
    if z.target is not None and z.target != s:
        return z
    return InternalState(None, z.zeta + float(vhat.v[t, s] - qbar[t, s, a]))


def shield_action(
    s: int,
    z: InternalState,
    t: int,
    pi_hat_action: int,
    pi_bar_action: int,
    config: AgentConfig,
    gap: float = 0.0,
) -> tuple[int, bool]:
    """Return (action, used_ucb).

    The UCB action is allowed once the target has been reached (at the target
    state itself unless ``config.literal_eq4``), while the deficit is at most
    eta/2, and, with ``strict_gate``, only if this step keeps it within eta.
    """
    if config.literal_eq4:
        reached = z.target is None
    else:
        reached = z.target is None or z.target == s
    ok = reached and z.zeta <= config.eta / 2
    if ok and config.strict_gate:
        ok = z.zeta + gap <= config.eta
    return (pi_hat_action, True) if ok else (pi_bar_action, False)


@dataclass(frozen=True)
class BaselineBounds:
    """Per-episode baseline policy with the bounds the shield compares against."""

    policy: np.ndarray  # pi_bar (H, S)
    qbar: np.ndarray  # conservative Q of pi_bar (H, S, A)
    vhat: EvalOutput  # optimistic evaluation of pi_bar


def baseline_bounds(data: Counts, params: BonusParams, config: AgentConfig) -> BaselineBounds:
    model = empirical_model(data)
    cons = conservative_plan(model, data, params, config.gamma, config.clipping)
    vhat = optimistic_eval(model, data, params, cons.policy, config.gamma, config.clipping)
    return BaselineBounds(cons.policy, cons.q, vhat)


def ucb_policy(data: Counts, params: BonusParams, config: AgentConfig) -> np.ndarray:
    return optimistic_plan(empirical_model(data), data, params, config.gamma, config.clipping).policy


@dataclass
class MetaRollout:
    states: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    next_states: list = field(default_factory=list)
    origin: list = field(default_factory=list)  # (episode, local step)

    def __len__(self) -> int:
        return len(self.states)

    def append(self, rollout: Rollout, t: int) -> None:
        self.states.append(int(rollout.states[t]))
        self.actions.append(int(rollout.actions[t]))
        self.rewards.append(float(rollout.rewards[t]))
        self.next_states.append(int(rollout.next_states[t]))
        self.origin.append((rollout.episode_index, t))

    def is_chained(self) -> bool:
        return all(self.next_states[j] == self.states[j + 1] for j in range(len(self) - 1))

    def as_arrays(self):
        return (
            np.asarray(self.states, dtype=int),
            np.asarray(self.actions, dtype=int),
            np.asarray(self.rewards, dtype=float),
            np.asarray(self.next_states, dtype=int),
        )


@dataclass
class MetaEpisodeState:
    H: int
    meta_index: int = 0
    ucb_steps_collected: int = 0
    next_episode_target: int | None = None
    fragment_markers: list = field(default_factory=list)  # per episode: local steps that used pi_hat
    assembled: MetaRollout = field(default_factory=MetaRollout)
    episodes_this_meta: int = 0

    @property
    def complete(self) -> bool:
        return self.ucb_steps_collected >= self.H

    def next_meta(self, s1: int) -> "MetaEpisodeState":
        return MetaEpisodeState(self.H, meta_index=self.meta_index + 1, next_episode_target=s1)


class _ShieldActor:
    """Stateful action callback for one episode of the shielded agent."""

    def __init__(self, meta: MetaEpisodeState, pi_hat, bounds: BaselineBounds, config: AgentConfig, s1: int):
        self.meta = meta
        self.pi_hat = pi_hat
        self.bounds = bounds
        self.config = config
        self.H = meta.H
        self.z = init_internal(meta.episodes_this_meta, meta.next_episode_target, s1)
        self.used: list[bool] = []
        self.zetas: list[float] = []
        self.targets: list[int] = []
        self.n_used = 0
        self.closed = False  # exploration is over for this episode

    def __call__(self, t: int, s: int, _history) -> int:
        z = self.z
        cfg = self.config
        qbar, vhat = self.bounds.qbar, self.bounds.vhat
        a_bar = int(self.bounds.policy[t, s])
        j = self.meta.ucb_steps_collected + self.n_used
        used = False
        a = a_bar
        if not self.closed and j < self.H:
            a_hat = int(self.pi_hat[j if cfg.ucb_time_index == "meta" else t, s])
            gap = float(vhat.v[t, s] - qbar[t, s, a_hat])
            a, used = shield_action(s, z, t, a_hat, a_bar, cfg, gap)
        self.targets.append(-1 if z.target is None else z.target)
        if used:
            self.n_used += 1
            self.z = sigma_update(z, s, a, vhat, qbar, t)
        elif self.n_used > 0 or j >= self.H:
            # fragment finished; the baseline adds no true deficit, so zeta stays put
            self.closed = True
        elif z.target is not None and z.target == s and not cfg.literal_eq4:
            # strict gate refused at the target: keep waiting for a later visit
            pass
        else:
            self.z = sigma_update(z, s, a, vhat, qbar, t)
        self.used.append(used)
        self.zetas.append(self.z.zeta)
        return a


def run_unif_conserv_episode(
    mdp: TabularMdp,
    data: Counts,
    meta: MetaEpisodeState,
    pi_hat: np.ndarray,
    config: AgentConfig,
    rng: np.random.Generator,
    params: BonusParams | None = None,
    bounds: BaselineBounds | None = None,
    episode_index: int = 0,
) -> tuple[Rollout, MetaEpisodeState]:
    """Run one real episode of the shielded agent and advance ``meta`` in place.

    ``bounds`` defaults to the baseline constructions recomputed from ``data``.
    UCB steps are indexed by meta-step, so the fragments concatenate into one
    H-step UCB episode.
    """
    if bounds is None:
        if params is None:
            params = config.bonus_params(mdp, 1)
        bounds = baseline_bounds(data, params, config)
    meta.episodes_this_meta += 1
    if meta.episodes_this_meta > config.episode_cap:
        raise MetaEpisodeAbort(
            f"meta-episode {meta.meta_index} used {meta.episodes_this_meta - 1} episodes without collecting "
            f"{meta.H} UCB steps (have {meta.ucb_steps_collected}, target {meta.next_episode_target}); "
            "the target state is not being reached: check the ergodicity assumption"
        )
    actor = _ShieldActor(meta, pi_hat, bounds, config, mdp.s1)
    rollout = sample_rollout(mdp, actor, rng, episode_index=episode_index)
    used = np.array(actor.used, dtype=bool)
    rollout.annotations = {"used_ucb": used, "zeta": np.array(actor.zetas), "target": np.array(actor.targets)}
    steps = np.flatnonzero(used)
    meta.fragment_markers.append(steps.tolist())
    for t in steps:
        meta.assembled.append(rollout, int(t))
    meta.ucb_steps_collected += len(steps)
    if len(steps) and not meta.complete:
        meta.next_episode_target = int(rollout.next_states[steps[-1]])
    return rollout, meta


def true_violation(mdp: TabularMdp, baseline: np.ndarray, rollout: Rollout, eta: float, values=None) -> tuple[float, bool]:
    """Maximum true reward deficit of ``rollout`` against ``baseline``, and whether it exceeds eta.

    ``values`` may carry a precomputed ``exact_policy_eval(mdp, baseline)``.
    """
    V, Q = values if values is not None else exact_policy_eval(mdp, baseline)
    t = np.arange(len(rollout))
    gaps = np.maximum(V[t, rollout.states] - Q[t, rollout.states, rollout.actions], 0.0)
    deficit = np.cumsum(gaps)
    m = float(deficit.max()) if len(deficit) else 0.0
    return m, m > eta


def deficit_trace(mdp: TabularMdp, baseline: np.ndarray, rollout: Rollout) -> np.ndarray:
    V, Q = exact_policy_eval(mdp, baseline)
    t = np.arange(len(rollout))
    return np.cumsum(np.maximum(V[t, rollout.states] - Q[t, rollout.states, rollout.actions], 0.0))


class UnifConservAgent:
    kind = "unif_conserv_ucbvi"

    def __init__(self, mdp: TabularMdp, config: AgentConfig, params: BonusParams, warm_start=(), keep_meta_rollouts=False):
        self.mdp = mdp
        self.config = config
        self.params = params
        self.data = Counts.zeros(mdp.S, mdp.A)
        self.meta_data = Counts.zeros(mdp.S, mdp.A)
        for ro in warm_start:
            self.data.add_rollout(ro)
            self.meta_data.add_rollout(ro)
        self.meta = MetaEpisodeState(mdp.H, next_episode_target=mdp.s1)
        self.keep_meta_rollouts = keep_meta_rollouts
        self.completed: list[MetaRollout] = []
        self.meta_lengths: list[int] = []
        self._replan_ucb()

    def _replan_ucb(self):
        src = self.data if self.config.use_full_data_for_ucb else self.meta_data
        self.pi_hat = ucb_policy(src, self.params, self.config)

    def episode(self, rng: np.random.Generator, k: int):
        bounds = baseline_bounds(self.data, self.params, self.config)
        rollout, meta = run_unif_conserv_episode(
            self.mdp, self.data, self.meta, self.pi_hat, self.config, rng, self.params, bounds, episode_index=k
        )
        self.data.add_rollout(rollout)
        info = {
            "meta_index": meta.meta_index,
            "meta_episode_n": meta.episodes_this_meta,
            "ucb_steps": int(rollout.annotations["used_ucb"].sum()),
        }
        if meta.complete:
            mr = meta.assembled
            self.meta_data.update_many(*(a[: self.mdp.H] for a in mr.as_arrays()))
            self.meta_lengths.append(meta.episodes_this_meta)
            if self.keep_meta_rollouts:
                self.completed.append(mr)
            self.meta = meta.next_meta(self.mdp.s1)
            self._replan_ucb()
        return rollout, bounds.policy, info


class UcbviAgent:
    kind = "ucbvi"

    def __init__(self, mdp: TabularMdp, config: AgentConfig, params: BonusParams, warm_start=()):
        self.mdp = mdp
        self.config = config
        self.params = params
        self.data = Counts.zeros(mdp.S, mdp.A)
        for ro in warm_start:
            self.data.add_rollout(ro)
        self.meta_lengths: list[int] = []

    def episode(self, rng, k):
        model = empirical_model(self.data)
        pi_hat = optimistic_plan(model, self.data, self.params, self.config.gamma, self.config.clipping).policy
        pi_bar = conservative_plan(model, self.data, self.params, self.config.gamma, self.config.clipping).policy
        rollout = sample_rollout(self.mdp, policy_actor(pi_hat), rng, episode_index=k)
        self.data.add_rollout(rollout)
        self.meta_lengths.append(1)
        return rollout, pi_bar, {"meta_index": k, "meta_episode_n": 1, "ucb_steps": self.mdp.H}


class BaselineAgent:
    kind = "baseline_only"

    def __init__(self, mdp: TabularMdp, config: AgentConfig, params: BonusParams, warm_start=()):
        self.mdp = mdp
        self.config = config
        self.params = params
        self.data = Counts.zeros(mdp.S, mdp.A)
        for ro in warm_start:
            self.data.add_rollout(ro)
        self.meta_lengths: list[int] = []

    def episode(self, rng, k):
        model = empirical_model(self.data)
        pi_bar = conservative_plan(model, self.data, self.params, self.config.gamma, self.config.clipping).policy
        rollout = sample_rollout(self.mdp, policy_actor(pi_bar), rng, episode_index=k)
        self.data.add_rollout(rollout)
        return rollout, pi_bar, {"meta_index": k, "meta_episode_n": 1, "ucb_steps": 0}


def make_agent(kind: str, mdp: TabularMdp, config: AgentConfig, params: BonusParams, warm_start=(), **kw):
    if kind == "unif_conserv_ucbvi":
        return UnifConservAgent(mdp, config, params, warm_start, **kw)
    if kind == "ucbvi":
        return UcbviAgent(mdp, config, params, warm_start)
    if kind == "baseline_only":
        return BaselineAgent(mdp, config, params, warm_start)
    raise ValueError(f"unknown agent kind {kind!r}; expected one of {AGENT_KINDS}")


def run_agent(
    kind: str,
    mdp: TabularMdp,
    config: AgentConfig,
    total_episodes: int,
    warm_start=(),
    rng: np.random.Generator | None = None,
    seed: int = 0,
    trace: bool = False,
    keep_meta_rollouts: bool = False,
) -> MetricsLog:
    """Run ``total_episodes`` online episodes and monitor regret and true deficit.

    Violations are judged on the true MDP against the baseline policy that
    was in force during each episode.
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    V_star, _, _ = exact_optimal(mdp)
    v1 = float(V_star[0, mdp.s1])
    log = MetricsLog(agent=kind, seed=seed, eta=config.eta, optimal_value=v1)
    if total_episodes <= 0:
        return log
    params = config.bonus_params(mdp, total_episodes)
    kw = {"keep_meta_rollouts": keep_meta_rollouts} if kind == "unif_conserv_ucbvi" else {}
    agent = make_agent(kind, mdp, config, params, warm_start, **kw)
    cache: dict[bytes, tuple] = {}
    for k in range(total_episodes):
        rollout, pi_bar, info = agent.episode(rng, k)
        key = pi_bar.tobytes()
        if key not in cache:
            if len(cache) > 256:
                cache.clear()
            cache[key] = exact_policy_eval(mdp, pi_bar)
        max_def, violated = true_violation(mdp, pi_bar, rollout, config.eta, cache[key])
        ret = rollout.ret()
        zetas = rollout.annotations.get("zeta")
        log.records.append(
            EpisodeRecord(
                episode=k,
                agent=kind,
                seed=seed,
                eta=config.eta,
                ret=ret,
                regret=v1 - ret,
                violated=bool(violated),
                max_deficit=max_def,
                meta_index=info["meta_index"],
                meta_episode_n=info["meta_episode_n"],
                ucb_steps=info["ucb_steps"],
                max_zeta=float(zetas.max()) if zetas is not None else 0.0,
            )
        )
        if trace:
            ann = rollout.annotations
            for t, step in enumerate(rollout):
                log.trace.append(
                    {
                        "episode": k,
                        "t": t,
                        "s": step.s,
                        "a": step.a,
                        "r": step.r,
                        "s_next": step.s_next,
                        "baseline_action": int(pi_bar[t, step.s]),
                        "used_ucb": bool(ann["used_ucb"][t]) if "used_ucb" in ann else kind == "ucbvi",
                        "zeta": float(ann["zeta"][t]) if "zeta" in ann else None,
                        "target": (int(ann["target"][t]) if ann["target"][t] >= 0 else None) if "target" in ann else None,
                    }
                )
    log.meta_lengths = list(agent.meta_lengths)
    if keep_meta_rollouts and kind == "unif_conserv_ucbvi":
        log.meta_rollouts = agent.completed
    return log
