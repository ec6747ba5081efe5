import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from aoicache.aoi import AoiLedger, InfeasibleActionError, advance_aoi
from aoicache.caching import (
    NOOP,
    CachingAction,
    CachingWorld,
    ChannelLimits,
    UtilityParams,
    aoi_greedy_policy,
    best_update_reward,
    caching_utility,
    calibrate_w,
    enumerate_actions,
    link_cost,
    lookahead_scorer,
    myopic_caching_policy,
    random_policy,
    transition,
)
from oracles import brute_actions, ref_advance, ref_utility

AMPLE = ChannelLimits(10, 10, 10)


def ledger(cv=None, mbs=None, rsu=None, aoi_max=None, n_cv=0):
    return AoiLedger(cv=cv or {}, mbs=mbs or {}, rsu=rsu or {}, aoi_max=aoi_max or {}, n_cv=n_cv)


def test_enumerate_updates_only():
    led = ledger(mbs={0: 1, 1: 1}, rsu={(0, 0): 3, (0, 1): 3}, aoi_max={0: 8, 1: 8})
    acts = enumerate_actions(led, AMPLE)
    assert acts == [NOOP, CachingAction((), ((0, 0),)), CachingAction((), ((0, 1),))]


def test_enumerate_empty_system():
    assert enumerate_actions(ledger(), AMPLE) == [NOOP]


def test_enumerate_one_cv_two_contents():
    led = ledger(cv={(0, 0): 1, (0, 1): 2}, mbs={0: 1, 1: 1}, rsu={(0, 0): 3, (0, 1): 3},
                 aoi_max={0: 8, 1: 8}, n_cv=1)
    assert len(enumerate_actions(led, AMPLE)) == 9


@st.composite
def decision_case(draw, max_cv=3, max_rsu=3):
    n_regions = draw(st.integers(1, 4))
    n_rsu = draw(st.integers(1, max_rsu))
    n_cv = draw(st.integers(0, max_cv))
    amax = {h: draw(st.integers(1, 20)) for h in range(n_regions)}
    cv = {(j, h): draw(st.integers(1, amax[h]))
          for j in range(n_cv) for h in range(n_regions) if draw(st.booleans())}
    mbs = {h: draw(st.integers(1, 40)) for h in range(n_regions)}
    rsu = {(k, h): draw(st.integers(1, 40)) for k in range(n_rsu) for h in range(n_regions) if h % n_rsu == k}
    led = AoiLedger(cv=cv, mbs=mbs, rsu=rsu, aoi_max=amax, n_cv=n_cv)
    world = CachingWorld(
        cv_distance={j: draw(st.floats(10, 300)) for j in range(n_cv)},
        rsu_distance={k: draw(st.floats(10, 300)) for k in range(n_rsu)},
        popularity={key: draw(st.one_of(st.just(0.0), st.floats(1e-3, 1.0))) for key in rsu},
    )
    params = UtilityParams(
        epsilon=draw(st.one_of(st.sampled_from([0.0, 1.0]), st.floats(1e-3, 1.0))),
        w=draw(st.floats(1.0, 5000.0)),
        weight_mode=draw(st.sampled_from(["uniform", "aoi_share"])),
        popularity_floor=0.01,
    )
    limits = ChannelLimits(draw(st.integers(0, 6)), draw(st.integers(0, 3)), draw(st.integers(0, 3)))
    return led, world, params, limits


@settings(max_examples=200, deadline=None)
@given(decision_case())
def test_enumeration_matches_subset_filter(case):
    led, _, _, limits = case
    assert set(enumerate_actions(led, limits)) == set(brute_actions(led, limits))
    acts = enumerate_actions(led, limits)
    assert acts == sorted(acts) and acts[0] == NOOP


def test_utility_single_copy():
    led = ledger(mbs={0: 1}, rsu={(0, 0): 5}, aoi_max={0: 20})
    world = CachingWorld({}, {0: 100.0}, {(0, 0): 1.0})
    assert caching_utility(led, NOOP, world, UtilityParams(epsilon=1.0)) == pytest.approx(4.0)


def test_utility_prefers_larger_threshold_at_equal_age():
    world = CachingWorld({}, {0: 100.0}, {(0, 0): 0.5, (0, 1): 0.5})
    params = UtilityParams(epsilon=1.0)
    both = ledger(mbs={0: 1, 1: 1}, rsu={(0, 0): 3, (0, 1): 3}, aoi_max={0: 7, 1: 4})
    first = ledger(mbs={0: 1}, rsu={(0, 0): 3}, aoi_max={0: 7})
    second = ledger(mbs={1: 1}, rsu={(0, 1): 3}, aoi_max={1: 4})
    assert caching_utility(first, NOOP, world, params) > caching_utility(second, NOOP, world, params)
    assert caching_utility(both, NOOP, world, params) == pytest.approx((7 / 3 + 4 / 3) * 0.5 * 0.5)


def test_noop_with_epsilon_one_has_no_cost_term():
    led = ledger(mbs={0: 1}, rsu={(0, 0): 4}, aoi_max={0: 8})
    world = CachingWorld({}, {0: 100.0}, {(0, 0): 1.0})
    assert caching_utility(led, NOOP, world, UtilityParams(epsilon=1.0, w=3.0)) == pytest.approx(3.0 * 8 / 4)


def test_zero_aoi_guard():
    led = AoiLedger.__new__(AoiLedger)
    object.__setattr__(led, "cv", {})
    object.__setattr__(led, "mbs", {0: 0})
    object.__setattr__(led, "rsu", {(0, 0): 0})
    object.__setattr__(led, "aoi_max", {0: 8})
    object.__setattr__(led, "n_cv", 0)
    world = CachingWorld({}, {0: 1.0}, {(0, 0): 1.0})
    assert caching_utility(led, NOOP, world, UtilityParams(epsilon=1.0)) == pytest.approx(8.0)


def test_transition_noop():
    led = ledger(mbs={0: 3}, rsu={(0, 0): 4}, aoi_max={0: 8})
    nxt, cost = transition(led, NOOP, CachingWorld({}, {0: 200.0}, {(0, 0): 0.5}))
    assert cost == 0.0 and nxt.mbs == {0: 4} and nxt.rsu == {(0, 0): 5}


def test_transition_update_cost():
    led = ledger(mbs={0: 3}, rsu={(0, 0): 4}, aoi_max={0: 8})
    _, cost = transition(led, CachingAction((), ((0, 0),)), CachingWorld({}, {0: 200.0}, {(0, 0): 0.5}))
    assert cost == pytest.approx(400.0)


def test_transition_upload_plus_update_cost():
    led = ledger(cv={(0, 0): 2}, mbs={0: 3}, rsu={(0, 0): 4}, aoi_max={0: 8}, n_cv=1)
    world = CachingWorld({0: 100.0}, {0: 200.0}, {(0, 0): 1.0})
    _, cost = transition(led, CachingAction(((0, 0),), ((0, 0),)), world)
    assert cost == pytest.approx(300.0)


def test_transition_rejects_infeasible():
    led = ledger(cv={(0, 0): 2, (1, 0): 2}, mbs={0: 3}, rsu={(0, 0): 4}, aoi_max={0: 8}, n_cv=2)
    world = CachingWorld({0: 1.0, 1: 1.0}, {0: 1.0}, {(0, 0): 1.0})
    with pytest.raises(InfeasibleActionError):
        transition(led, CachingAction(((0, 0), (1, 0)), ()), world, AMPLE)


def test_popularity_floor_bounds_update_cost():
    world = CachingWorld({}, {0: 50.0}, {(0, 0): 0.0})
    assert link_cost(CachingAction((), ((0, 0),)), world, 0.01) == pytest.approx(5000.0)


@settings(max_examples=200, deadline=None)
@given(decision_case())
def test_utility_matches_reference(case):
    led, world, params, limits = case
    for action in enumerate_actions(led, limits)[:20]:
        after = advance_aoi(led, action.uploads, action.updates)
        assert caching_utility(after, action, world, params) == pytest.approx(
            ref_utility(after, action, world, params), rel=1e-9, abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(decision_case(), st.data())
def test_utility_strictly_decreasing_in_rsu_aoi(case, data):
    led, world, params, _ = case
    assume(led.rsu and params.epsilon > 0)
    key = data.draw(st.sampled_from(sorted(led.rsu)))
    assume(world.popularity[key] > 0)
    older = dict(led.rsu)
    older[key] += 1
    led2 = AoiLedger(cv=led.cv, mbs=led.mbs, rsu=older, aoi_max=led.aoi_max, n_cv=led.n_cv)
    assert caching_utility(led2, NOOP, world, params) < caching_utility(led, NOOP, world, params)


@settings(max_examples=200, deadline=None)
@given(decision_case())
def test_utility_strictly_decreasing_in_cost(case):
    led, world, params, _ = case
    assume(params.epsilon < 1 and led.rsu)
    key = sorted(led.rsu)[0]
    action = CachingAction((), (key,))
    cheaper = CachingWorld(world.cv_distance, {**world.rsu_distance, key[0]: world.rsu_distance[key[0]] / 2},
                           world.popularity)
    assert caching_utility(led, action, world, params) < caching_utility(led, action, cheaper, params)


@settings(max_examples=200, deadline=None)
@given(decision_case())
def test_cost_zero_iff_noop(case):
    led, world, _, limits = case
    for action in enumerate_actions(led, limits)[:30]:
        _, cost = transition(led, action, world, limits)
        assert (cost == 0.0) == action.is_noop


def brute_myopic(led, world, params, limits):
    best, best_val = None, -np.inf
    for action in sorted(brute_actions(led, limits)):
        val = ref_utility(ref_advance(led, action.uploads, action.updates), action, world, params)
        if best is None or val > best_val:
            best, best_val = action, val
    return best, best_val


@settings(max_examples=200, deadline=None)
@given(decision_case())
def test_myopic_is_one_step_argmax(case):
    led, world, params, limits = case
    got = myopic_caching_policy(led, world, params, limits)
    _, best_val = brute_myopic(led, world, params, limits)
    val = ref_utility(ref_advance(led, got.uploads, got.updates), got, world, params)
    assert val == pytest.approx(best_val, rel=1e-9, abs=1e-9)


@settings(max_examples=150, deadline=None)
@given(decision_case(), st.floats(0.0, 0.99))
def test_every_policy_returns_a_feasible_action(case, lookahead):
    led, world, params, limits = case
    feasible = set(enumerate_actions(led, limits))
    rng = np.random.default_rng(0)
    assert myopic_caching_policy(led, world, params, limits, lookahead) in feasible
    assert myopic_caching_policy(led, world, params, limits, lookahead, exhaustive_bound=0) in feasible
    assert aoi_greedy_policy(led, world, limits) in feasible
    assert random_policy(led, world, limits, rng) in feasible
    assert random_policy(led, world, limits, rng, exhaustive_bound=0) in feasible


@settings(max_examples=200, deadline=None)
@given(decision_case())
def test_best_update_reward_matches_update_only_search(case):
    led, world, params, limits = case
    best = -np.inf
    for action in brute_actions(led, limits):
        if action.uploads:
            continue
        best = max(best, ref_utility(ref_advance(led, (), action.updates), action, world, params))
    got = best_update_reward(led, world, params, limits)
    if params.weight_mode.value == "uniform":
        assert got == pytest.approx(best, rel=1e-9, abs=1e-9)
    else:
        assert got <= best + 1e-9 * max(1.0, abs(best))


@settings(max_examples=200, deadline=None)
@given(decision_case(), st.floats(0.01, 0.99))
def test_fast_lookahead_score_matches_definition(case, la):
    led, world, params, limits = case
    assume(params.weight_mode.value == "uniform")
    fast = lookahead_scorer(led, world, params, limits, la)
    for action in enumerate_actions(led, limits)[:25]:
        nxt = advance_aoi(led, action.uploads, action.updates)
        slow = caching_utility(nxt, action, world, params) + la * best_update_reward(nxt, world, params, limits)
        assert fast(action) == pytest.approx(slow, rel=1e-9, abs=1e-7)


def test_myopic_noop_when_every_link_loses():
    led = ledger(mbs={0: 1, 1: 1}, rsu={(0, 0): 1, (0, 1): 1}, aoi_max={0: 8, 1: 8})
    world = CachingWorld({}, {0: 100.0}, {(0, 0): 0.5, (0, 1): 0.5})
    assert myopic_caching_policy(led, world, UtilityParams(epsilon=0.5)) == NOOP


def test_myopic_refreshes_stale_copy_with_one_channel():
    led = ledger(mbs={0: 1, 1: 1}, rsu={(0, 0): 40, (0, 1): 2}, aoi_max={0: 10, 1: 10})
    world = CachingWorld({}, {0: 1.0}, {(0, 0): 0.5, (0, 1): 0.5})
    params = UtilityParams(epsilon=0.5, w=1000.0)
    act = myopic_caching_policy(led, world, params, ChannelLimits(1, 0, 1))
    assert act == CachingAction((), ((0, 0),))


def test_lookahead_values_uploads():
    led = ledger(cv={(0, 0): 1}, mbs={0: 15}, rsu={(0, 0): 15}, aoi_max={0: 20}, n_cv=1)
    world = CachingWorld({0: 10.0}, {0: 10.0}, {(0, 0): 1.0})
    params = UtilityParams(epsilon=0.5, w=1000.0)
    assert myopic_caching_policy(led, world, params, lookahead=0.0).uploads == ()
    assert myopic_caching_policy(led, world, params, lookahead=0.9).uploads == ((0, 0),)


def test_greedy_examples():
    led = ledger(mbs={0: 2}, rsu={(0, 0): 30}, aoi_max={0: 8})
    assert aoi_greedy_policy(led).updates == ((0, 0),)
    flat = ledger(mbs={0: 5, 1: 7}, rsu={(0, 0): 4, (1, 1): 6}, aoi_max={0: 8, 1: 8})
    assert aoi_greedy_policy(flat).updates == ()
    two = ledger(mbs={0: 1, 1: 1}, rsu={(0, 0): 5, (1, 1): 9}, aoi_max={0: 8, 1: 8})
    assert aoi_greedy_policy(two, limits=ChannelLimits(1, 1, 1)).updates == ((1, 1),)


def test_greedy_ignores_thresholds():
    led = ledger(mbs={0: 1, 1: 1}, rsu={(0, 0): 6, (0, 1): 7}, aoi_max={0: 5, 1: 50})
    assert aoi_greedy_policy(led, limits=ChannelLimits(1, 0, 1)).updates == ((0, 1),)


def test_random_policy_is_seeded():
    led = ledger(cv={(0, 0): 1, (0, 1): 2}, mbs={0: 1, 1: 1}, rsu={(0, 0): 3, (0, 1): 3},
                 aoi_max={0: 8, 1: 8}, n_cv=1)
    a = [random_policy(led, None, AMPLE, np.random.default_rng(5)) for _ in range(1)]
    r1, r2 = np.random.default_rng(9), np.random.default_rng(9)
    seq1 = [random_policy(led, None, AMPLE, r1) for _ in range(50)]
    seq2 = [random_policy(led, None, AMPLE, r2) for _ in range(50)]
    assert seq1 == seq2 and a


def test_random_policy_singleton_set():
    assert random_policy(ledger(), None, AMPLE, np.random.default_rng(0)) == NOOP


@pytest.mark.parametrize("bound", [20_000, 0])
def test_random_policy_is_uniform_on_nine_actions(bound):
    led = ledger(cv={(0, 0): 1, (0, 1): 2}, mbs={0: 1, 1: 1}, rsu={(0, 0): 3, (0, 1): 3},
                 aoi_max={0: 8, 1: 8}, n_cv=1)
    actions = enumerate_actions(led, AMPLE)
    assert len(actions) == 9
    rng = np.random.default_rng(2024)
    n = 10_000
    counts = dict.fromkeys(actions, 0)
    for _ in range(n):
        counts[random_policy(led, None, AMPLE, rng, exhaustive_bound=bound)] += 1
    p = 1 / 9
    sigma = np.sqrt(n * p * (1 - p))
    assert all(abs(c - n * p) <= 3 * sigma for c in counts.values())


def test_calibrated_w_balances_terms():
    led = ledger(mbs={0: 1, 1: 1}, rsu={(0, 0): 4, (0, 1): 2}, aoi_max={0: 8, 1: 8})
    world = CachingWorld({0: 30.0}, {0: 100.0}, {(0, 0): 0.5, (0, 1): 0.5})
    w = calibrate_w(led, world, UtilityParams())
    per_copy = (8 / 4 + 8 / 2) * 0.5 * 0.5 / 2
    mean_cost = (200.0 + 200.0 + 30.0) / 3
    assert w == pytest.approx(mean_cost / per_copy)
