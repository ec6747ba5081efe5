import numpy as np
import pytest

from aoicache.caching import CachingWorld, ChannelLimits, MdpConfig, UtilityParams, myopic_caching_policy
from aoicache.mdp import (
    FiniteMdp,
    MicroInstance,
    StateBudgetError,
    build_micro_mdp,
    finite_horizon,
    value_iteration,
)
from oracles import random_micro_instance, ref_advance, ref_saturate, ref_utility, tree_search_value


def chain_mdp(reward_absorbing=1.0):
    """State 0 moves to absorbing state 1; reward only in state 1."""
    reward = np.array([[0.0], [reward_absorbing]])
    feasible = np.ones((2, 1), dtype=bool)
    nxt = np.array([[[1]], [[1]]])
    prob = np.ones((2, 1, 1))
    return FiniteMdp(reward, feasible, nxt, prob)


def test_zero_rewards_converge_in_one_sweep():
    res = value_iteration(chain_mdp(0.0))
    assert np.all(res.values == 0.0) and res.sweeps == 1


def test_two_state_chain_geometric_value():
    res = value_iteration(chain_mdp(), MdpConfig(gamma=0.5, theta=1e-12))
    assert res.values[1] == pytest.approx(2.0, abs=1e-10)
    assert res.values[0] == pytest.approx(1.0, abs=1e-10)


def test_ties_go_to_lowest_action():
    mdp = FiniteMdp(np.array([[1.0, 1.0, 0.5]]), np.ones((1, 3), dtype=bool),
                    np.zeros((1, 3, 1), dtype=np.int64), np.ones((1, 3, 1)))
    assert value_iteration(mdp).policy[0] == 0


def test_infeasible_actions_are_never_chosen():
    mdp = FiniteMdp(np.array([[5.0, 1.0]]), np.array([[False, True]]),
                    np.zeros((1, 2, 1), dtype=np.int64), np.ones((1, 2, 1)))
    assert value_iteration(mdp).policy[0] == 1


def test_state_budget_refused():
    inst = MicroInstance({0: 3, 1: 3}, {0: (0, 1)}, 2, CachingWorld({0: 1, 1: 1}, {0: 1}, {(0, 0): .5, (0, 1): .5}),
                         aoi_cap=3)
    with pytest.raises(StateBudgetError):
        build_micro_mdp(inst, MdpConfig(max_states=100))
    with pytest.raises(StateBudgetError):
        value_iteration(chain_mdp(), MdpConfig(max_states=1))


def test_aoi_cap_must_cover_thresholds():
    with pytest.raises(ValueError):
        MicroInstance({0: 5}, {0: (0,)}, 1, CachingWorld({0: 1}, {0: 1}, {(0, 0): 1}), aoi_cap=4)


@pytest.fixture(scope="module")
def spec_instance():
    """1 CV, 1 RSU, 2 regions, aoi_cap 4."""
    world = CachingWorld({0: 80.0}, {0: 120.0}, {(0, 0): 0.7, (0, 1): 0.3})
    inst = MicroInstance({0: 3, 1: 4}, {0: (0, 1)}, 1, world, UtilityParams(epsilon=0.5, w=400.0),
                         ChannelLimits(), aoi_cap=4, arrival_prob=0.0)
    mdp, actions = build_micro_mdp(inst)
    return inst, mdp, actions


def test_state_codec_roundtrip(spec_instance):
    inst, mdp, _ = spec_instance
    assert mdp.n_states == inst.n_states == 20 * 16 * 16
    for s in range(0, inst.n_states, 37):
        assert inst.state(inst.ledger(s)) == s


def test_horizon_three_policy_matches_tree_search(spec_instance):
    inst, mdp, actions = spec_instance
    gamma = 0.9
    values, policy = finite_horizon(mdp, gamma, 3)
    memo = {}
    for s in np.random.default_rng(3).choice(inst.n_states, 40, replace=False):
        led = inst.ledger(int(s))
        assert values[s] == pytest.approx(tree_search_value(inst, led, 3, gamma, memo), abs=1e-9)
        act = actions[policy[s]]
        after = ref_advance(led, act.uploads, act.updates)
        q = ref_utility(after, act, inst.world, inst.params)
        q += gamma * tree_search_value(inst, ref_saturate(after, inst.aoi_cap), 2, gamma, memo)
        assert q == pytest.approx(values[s], abs=1e-9)


def test_gamma_zero_policy_is_myopic(spec_instance):
    inst, mdp, actions = spec_instance
    res = value_iteration(mdp, MdpConfig(gamma=0.0))
    for s in range(inst.n_states):
        led = inst.ledger(s)
        assert actions[res.policy[s]] == myopic_caching_policy(led, inst.world, inst.params, inst.limits)


def test_residuals_monotone_and_below_theta(spec_instance):
    _, mdp, _ = spec_instance
    res = value_iteration(mdp, MdpConfig(gamma=0.9, theta=1e-6))
    r = res.residuals
    assert all(b <= a for a, b in zip(r, r[1:]))
    assert r[-1] < 1e-6


def test_stochastic_arrivals_sum_to_one():
    rng = np.random.default_rng(11)
    inst = random_micro_instance(rng, 600)
    inst = MicroInstance(inst.aoi_max, inst.rsu_regions, inst.n_cv, inst.world, inst.params, inst.limits,
                         inst.aoi_cap, 0.3)
    mdp, _ = build_micro_mdp(inst)
    sums = mdp.prob.sum(axis=2)
    assert np.allclose(sums[mdp.feasible], 1.0)


def test_json_roundtrip(tmp_path):
    inst = random_micro_instance(np.random.default_rng(5), 300)
    mdp, _ = build_micro_mdp(inst)
    path = tmp_path / "mdp.json"
    mdp.save(path)
    back = FiniteMdp.load(path)
    assert back.state_labels == mdp.state_labels and back.action_labels == mdp.action_labels
    a = value_iteration(mdp)
    b = value_iteration(back)
    assert np.array_equal(a.values, b.values) and np.array_equal(a.policy, b.policy)
