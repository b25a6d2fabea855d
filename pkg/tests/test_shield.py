import numpy as np
import pytest
from pytest import approx

from conservrl.envs import RandomMdpParams, build_random_ergodic_mdp, warm_start_dataset
from conservrl.estimation import Counts
from conservrl.mdp import Rollout, TabularMdp, exact_policy_eval
from conservrl.planning import EvalOutput
from conservrl.shield import (
    AgentConfig,
    InternalState,
    MetaEpisodeAbort,
    MetaEpisodeState,
    baseline_bounds,
    deficit_trace,
    init_internal,
    run_agent,
    run_unif_conserv_episode,
    shield_action,
    sigma_update,
    true_violation,
)
from stitching import flat_bounds, stitching_tv


def cycle_mdp(S=3, H=4):
    """Action 0 moves s -> s+1 mod S, action 1 stays.  Deterministic."""
    P = np.zeros((S, 2, S))
    for s in range(S):
        P[s, 0, (s + 1) % S] = 1.0
        P[s, 1, s] = 1.0
    return TabularMdp(P=P, R=np.full((S, 2), 0.5), H=H, s1=0)


@pytest.fixture(scope="module")
def small_ergodic():
    return build_random_ergodic_mdp(RandomMdpParams(S=3, A=2, H=6, min_transition_prob=0.1, seed=3, require_ergodic=False))


# internal state


def test_init_first_episode_targets_start():
    assert init_internal(1, None, s1=2) == InternalState(2, 0.0)


def test_init_later_episode_uses_target():
    assert init_internal(3, 1) == InternalState(1, 0.0)
    with pytest.raises(ValueError):
        init_internal(2, None)


def test_sigma_waits_for_target():
    vhat = EvalOutput(q=np.zeros((3, 2, 2)), v=np.full((3, 2), 0.4))
    qbar = np.full((3, 2, 2), 0.1)
    z = InternalState(1, 0.0)
    assert sigma_update(z, 0, 0, vhat, qbar, 0) == z
    z = sigma_update(z, 1, 0, vhat, qbar, 1)
    assert z.target is None and z.zeta == approx(0.3)
    assert sigma_update(z, 0, 1, vhat, qbar, 2).zeta == approx(0.6)


def test_shield_uses_ucb_within_budget():
    cfg = AgentConfig(eta=0.1)
    assert shield_action(0, InternalState(None, 0.05), 0, 1, 0, cfg) == (1, True)
    assert shield_action(0, InternalState(None, 0.051), 0, 1, 0, cfg) == (0, False)


def test_shield_target_eligibility():
    assert shield_action(2, InternalState(2, 0.0), 0, 1, 0, AgentConfig()) == (1, True)
    assert shield_action(1, InternalState(2, 0.0), 0, 1, 0, AgentConfig()) == (0, False)
    assert shield_action(2, InternalState(2, 0.0), 0, 1, 0, AgentConfig(literal_eq4=True)) == (0, False)


def test_strict_gate_blocks_large_gap():
    cfg = AgentConfig(eta=0.1, strict_gate=True)
    assert shield_action(0, InternalState(None, 0.04), 0, 1, 0, cfg, gap=0.07) == (0, False)
    assert shield_action(0, InternalState(None, 0.04), 0, 1, 0, cfg, gap=0.06) == (1, True)


# meta-episodes


def test_zero_gap_explores_whole_episode():
    mdp = cycle_mdp(H=5)
    meta = MetaEpisodeState(5, next_episode_target=0)
    pi_hat = np.ones((5, 3), dtype=int)
    ro, meta = run_unif_conserv_episode(
        mdp, Counts.zeros(3, 2), meta, pi_hat, AgentConfig(), np.random.default_rng(0), bounds=flat_bounds(mdp, gap=0.0)
    )
    assert ro.annotations["used_ucb"].all()
    assert meta.complete and meta.episodes_this_meta == 1


def test_two_episode_chaining():
    mdp = cycle_mdp(H=4)
    cfg = AgentConfig(eta=0.1)
    bounds = flat_bounds(mdp, baseline_action=0, gap=0.03)
    pi_hat = np.zeros((4, 3), dtype=int)
    meta = MetaEpisodeState(4, next_episode_target=0)
    rng = np.random.default_rng(0)
    ro1, meta = run_unif_conserv_episode(mdp, Counts.zeros(3, 2), meta, pi_hat, cfg, rng, bounds=bounds)
    assert ro1.annotations["used_ucb"].tolist() == [True, True, False, False]
    assert meta.next_episode_target == 2
    # zeta holds at 0.06 once the fragment is over
    assert ro1.annotations["zeta"] == approx([0.03, 0.06, 0.06, 0.06])
    ro2, meta = run_unif_conserv_episode(mdp, Counts.zeros(3, 2), meta, pi_hat, cfg, rng, bounds=bounds)
    assert ro2.annotations["used_ucb"].tolist() == [False, False, True, True]
    assert meta.complete
    mr = meta.assembled
    assert mr.states == [0, 1, 2, 0] and mr.next_states == [1, 2, 0, 1]
    assert mr.next_states[1] == mr.states[2] == 2
    assert mr.is_chained()
    assert mr.origin == [(0, 0), (0, 1), (0, 2), (0, 3)]
    assert meta.fragment_markers == [[0, 1], [2, 3]]


def test_missing_target_yields_no_fragment():
    mdp = cycle_mdp(H=4)
    bounds = flat_bounds(mdp, baseline_action=1)  # baseline never leaves s1
    meta = MetaEpisodeState(4, ucb_steps_collected=2, next_episode_target=2, episodes_this_meta=1)
    ro, meta = run_unif_conserv_episode(
        mdp, Counts.zeros(3, 2), meta, np.zeros((4, 3), dtype=int), AgentConfig(eta=0.1), np.random.default_rng(0), bounds=bounds
    )
    assert not ro.annotations["used_ucb"].any()
    assert meta.next_episode_target == 2 and meta.ucb_steps_collected == 2


def test_cap_aborts_stalled_meta_episode():
    mdp = cycle_mdp(H=4)
    bounds = flat_bounds(mdp, baseline_action=1)
    cfg = AgentConfig(eta=0.1, max_episodes_per_meta=2)
    meta = MetaEpisodeState(4, ucb_steps_collected=2, next_episode_target=2, episodes_this_meta=1)
    rng = np.random.default_rng(0)
    run_unif_conserv_episode(mdp, Counts.zeros(3, 2), meta, np.zeros((4, 3), dtype=int), cfg, rng, bounds=bounds)
    with pytest.raises(MetaEpisodeAbort, match="ergodicity"):
        run_unif_conserv_episode(mdp, Counts.zeros(3, 2), meta, np.zeros((4, 3), dtype=int), cfg, rng, bounds=bounds)


def test_default_cap():
    assert AgentConfig(delta=0.1).episode_cap == 280


def test_stitched_rollouts_match_direct_rollouts(small_ergodic):
    pi_hat = np.tile(np.array([1, 0, 1]), (small_ergodic.H, 1))  # stationary
    assert stitching_tv(small_ergodic, pi_hat, n=20_000, seed=1) <= 0.05


# violations


def _rollout(states, actions):
    n = len(states)
    return Rollout(np.array(states), np.array(actions), np.zeros(n), np.array(states), 0)


def _hand_values():
    V = np.full((3, 1), 0.5)
    Q = np.stack([np.full((3, 1), 0.5), np.full((3, 1), 0.2)], axis=2)
    return V, Q


def test_true_violation_two_steps():
    m, v = true_violation(None, None, _rollout([0, 0, 0], [1, 1, 0]), 0.5, values=_hand_values())
    assert m == approx(0.6) and v


def test_true_violation_one_step():
    m, v = true_violation(None, None, _rollout([0, 0, 0], [1, 0, 0]), 0.5, values=_hand_values())
    assert m == approx(0.3) and not v


def test_baseline_rollout_has_no_deficit(small_ergodic):
    pol = np.random.default_rng(0).integers(0, 2, size=(6, 3))
    from conservrl.mdp import policy_actor, sample_rollout

    ro = sample_rollout(small_ergodic, policy_actor(pol), np.random.default_rng(1))
    assert true_violation(small_ergodic, pol, ro, 0.01) == (0.0, False)


def test_baseline_agent_never_violates(small_ergodic):
    rng = np.random.default_rng(0)
    ws = warm_start_dataset(small_ergodic, 20, rng)
    log = run_agent("baseline_only", small_ergodic, AgentConfig(eta=0.01, bonus_scale=0.1), 200, ws, rng)
    assert log.total_violations == 0
    assert np.all(log.regret == [r.regret for r in log.records])


def test_strict_gate_keeps_zeta_within_budget(small_ergodic, inventory):
    for mdp, scale in [(small_ergodic, 0.05), (inventory, 0.01)]:
        rng = np.random.default_rng(2)
        ws = warm_start_dataset(mdp, 100, rng)
        cfg = AgentConfig(eta=0.2, strict_gate=True, bonus_scale=scale, max_episodes_per_meta=10**6)
        log = run_agent("unif_conserv_ucbvi", mdp, cfg, 150, ws, rng)
        assert max(r.max_zeta for r in log.records) <= 0.2


def test_zeta_dominates_true_deficit_under_sandwich(small_ergodic):
    mdp = small_ergodic
    rng = np.random.default_rng(4)
    data = Counts.zeros(3, 2)
    for ro in warm_start_dataset(mdp, 300, rng):
        data.add_rollout(ro)
    cfg = AgentConfig(eta=0.5, bonus_scale=0.02, max_episodes_per_meta=10**6)
    params = cfg.bonus_params(mdp, 200)
    meta = MetaEpisodeState(mdp.H, next_episode_target=mdp.s1)
    pi_hat = np.zeros((mdp.H, 3), dtype=int)
    checked = 0
    for k in range(200):
        bounds = baseline_bounds(data, params, cfg)
        V, Q = exact_policy_eval(mdp, bounds.policy)
        ro, meta = run_unif_conserv_episode(mdp, data, meta, pi_hat, cfg, rng, params, bounds, k)
        data.add_rollout(ro)
        if meta.complete:
            meta = meta.next_meta(mdp.s1)
        if np.all(bounds.qbar <= Q + 1e-12) and np.all(bounds.vhat.v >= V - 1e-12):
            checked += 1
            assert np.all(ro.annotations["zeta"] >= deficit_trace(mdp, bounds.policy, ro) - 1e-12)
    assert checked > 100


def test_meta_rollouts_complete_and_chained(small_ergodic):
    rng = np.random.default_rng(5)
    ws = warm_start_dataset(small_ergodic, 50, rng)
    cfg = AgentConfig(eta=0.3, bonus_scale=0.02, max_episodes_per_meta=10**6)
    log = run_agent("unif_conserv_ucbvi", small_ergodic, cfg, 300, ws, rng, trace=True, keep_meta_rollouts=True)
    assert log.meta_rollouts
    assert all(len(mr) == small_ergodic.H and mr.is_chained() for mr in log.meta_rollouts)
    assert sum(log.meta_lengths) <= 300
    # the UCB steps of each episode, in order, are what got appended
    steps = [(row["episode"], row["t"]) for row in log.trace if row["used_ucb"]]
    stitched = [o for mr in log.meta_rollouts for o in mr.origin]
    assert steps[: len(stitched)] == stitched


def test_ucbvi_records_full_exploration(small_ergodic):
    rng = np.random.default_rng(0)
    log = run_agent("ucbvi", small_ergodic, AgentConfig(bonus_scale=0.1), 5, (), rng)
    assert [r.ucb_steps for r in log.records] == [6] * 5


def test_zero_episodes_gives_empty_log(small_ergodic):
    log = run_agent("unif_conserv_ucbvi", small_ergodic, AgentConfig(), 0)
    assert len(log) == 0 and log.total_violations == 0


def test_unknown_agent_kind(small_ergodic):
    with pytest.raises(ValueError):
        run_agent("posterior_sampling", small_ergodic, AgentConfig(), 1)


@pytest.mark.parametrize("kw", [{"eta": 0}, {"delta": 1.5}, {"ucb_time_index": "wall"}, {"max_episodes_per_meta": 0}])
def test_agent_config_validated(kw):
    with pytest.raises(ValueError):
        AgentConfig(**kw)
