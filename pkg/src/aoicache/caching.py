"""Stage 1: which CV contents to upload to the MBS and which RSU copies to refresh."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

import numpy as np

from .aoi import AoiLedger, CvKey, InfeasibleActionError, RsuKey, advance_aoi

DEFAULT_EXHAUSTIVE_BOUND = 20_000


@dataclass(frozen=True, order=True)
class CachingAction:
    """Binary upload/update selection for one slot, stored as the set of ones.

    Ordering is the canonical action order: sorted uploads, then sorted
    updates, compared lexicographically, so the no-op sorts first.
    """

    uploads: tuple[CvKey, ...] = ()
    updates: tuple[RsuKey, ...] = ()

    @classmethod
    def of(cls, uploads: Iterable[CvKey] = (), updates: Iterable[RsuKey] = ()) -> CachingAction:
        return cls(tuple(sorted(uploads)), tuple(sorted(updates)))

    @property
    def is_noop(self) -> bool:
        return not self.uploads and not self.updates

    @property
    def n_links(self) -> int:
        return len(self.uploads) + len(self.updates)

    def x(self, j: int, h: int) -> int:
        return int((j, h) in self.uploads)

    def y(self, k: int, h: int) -> int:
        return int((k, h) in self.updates)

    def with_upload(self, key: CvKey) -> CachingAction:
        return CachingAction.of(self.uploads + (key,), self.updates)

    def with_update(self, key: RsuKey) -> CachingAction:
        return CachingAction.of(self.uploads, self.updates + (key,))


NOOP = CachingAction()


@dataclass(frozen=True)
class ChannelLimits:
    total: int = 6
    cv: int = 3
    rsu: int = 3


class WeightMode(str, Enum):
    UNIFORM = "uniform"
    AOI_SHARE = "aoi_share"


@dataclass(frozen=True)
class UtilityParams:
    epsilon: float = 0.5
    w: float = 1.0
    weight_mode: WeightMode = WeightMode.UNIFORM
    popularity_floor: float = 0.01

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if self.w <= 0:
            raise ValueError(f"w must be positive, got {self.w}")
        if self.popularity_floor <= 0:
            raise ValueError("popularity_floor must be positive")
        object.__setattr__(self, "weight_mode", WeightMode(self.weight_mode))


@dataclass(frozen=True)
class MdpConfig:
    gamma: float = 0.9
    theta: float = 1e-6
    aoi_cap: int = 20
    horizon: int = 100
    max_states: int = 20_000
    max_sweeps: int = 100_000

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.theta <= 0:
            raise ValueError("theta must be positive")


@dataclass(frozen=True)
class CachingWorld:
    """Geometry and popularity the MBS sees when deciding.

    ``cv_distance[j]`` and ``rsu_distance[k]`` are distances to the MBS;
    ``popularity[(k, h)]`` is the request share of region h at RSU k.
    """

    cv_distance: Mapping[int, float]
    rsu_distance: Mapping[int, float]
    popularity: Mapping[RsuKey, float] = field(default_factory=dict)


def is_feasible(action: CachingAction, ledger: AoiLedger, limits: ChannelLimits) -> bool:
    up_regions = [h for _, h in action.uploads]
    up_cvs = [j for j, _ in action.uploads]
    up_rsus = [k for k, _ in action.updates]
    return (
        len(set(up_regions)) == len(up_regions)
        and len(set(up_cvs)) == len(up_cvs)
        and len(set(up_rsus)) == len(up_rsus)
        and len(action.uploads) <= limits.cv
        and len(action.updates) <= limits.rsu
        and action.n_links <= limits.total
        and all(key in ledger.cv for key in action.uploads)
        and all(key in ledger.rsu for key in action.updates)
    )


def check_feasible(action: CachingAction, ledger: AoiLedger, limits: ChannelLimits) -> None:
    if not is_feasible(action, ledger, limits):
        raise InfeasibleActionError(f"infeasible caching action {action}")


def _per_entity_choices(ledger: AoiLedger) -> tuple[list[list[CvKey | None]], list[list[RsuKey | None]]]:
    cv_choices = []
    for j in range(ledger.n_cv):
        held = ledger.cv_contents(j)
        if held:
            cv_choices.append([None] + [(j, h) for h in held])
    rsu_choices = []
    for k in ledger.rsu_ids:
        rsu_choices.append([None] + [(k, h) for h in ledger.rsu_regions(k)])
    return cv_choices, rsu_choices


def action_space_bound(ledger: AoiLedger) -> int:
    """Size of the unconstrained per-entity product; an upper bound on the feasible set."""
    cv_choices, rsu_choices = _per_entity_choices(ledger)
    n = 1
    for c in cv_choices + rsu_choices:
        n *= len(c)
    return n


def enumerate_actions(ledger: AoiLedger, limits: ChannelLimits = ChannelLimits()) -> list[CachingAction]:
    """Every feasible action, in canonical order (no-op first)."""
    cv_choices, rsu_choices = _per_entity_choices(ledger)

    upload_sets = []
    for combo in itertools.product(*cv_choices):
        picked = [c for c in combo if c is not None]
        if len(picked) > limits.cv or len(picked) > limits.total:
            continue
        regions = [h for _, h in picked]
        if len(set(regions)) != len(regions):
            continue
        upload_sets.append(picked)

    update_sets = []
    for combo in itertools.product(*rsu_choices):
        picked = [c for c in combo if c is not None]
        if len(picked) <= limits.rsu and len(picked) <= limits.total:
            update_sets.append(picked)

    actions = [
        CachingAction.of(ups, upds)
        for ups in upload_sets
        for upds in update_sets
        if len(ups) + len(upds) <= limits.total
    ]
    actions.sort()
    return actions


def aoi_utility(ledger: AoiLedger, world: CachingWorld, params: UtilityParams) -> float:
    """Popularity-weighted ratio of validity threshold to current RSU AoI, summed."""
    if not ledger.rsu:
        return 0.0
    if params.weight_mode is WeightMode.UNIFORM:
        weights = dict.fromkeys(ledger.rsu, 1.0 / len(ledger.rsu))
    else:
        total = sum(max(a, 1) for a in ledger.rsu.values())
        weights = {key: max(a, 1) / total for key, a in ledger.rsu.items()}
    u = 0.0
    for key, a in ledger.rsu.items():
        u += ledger.aoi_max[key[1]] / max(a, 1) * weights[key] * world.popularity.get(key, 0.0)
    return u


def link_cost(action: CachingAction, world: CachingWorld, popularity_floor: float = 0.01) -> float:
    cost = 0.0
    for j, _ in action.uploads:
        cost += world.cv_distance[j]
    for k, h in action.updates:
        cost += world.rsu_distance[k] / max(world.popularity.get((k, h), 0.0), popularity_floor)
    return cost


def caching_utility(
    ledger_next: AoiLedger, action: CachingAction, world: CachingWorld, params: UtilityParams
) -> float:
    eps = params.epsilon
    gain = eps * aoi_utility(ledger_next, world, params) * params.w
    return gain - (1.0 - eps) * link_cost(action, world, params.popularity_floor)


def calibrate_w(ledger: AoiLedger, world: CachingWorld, params: UtilityParams) -> float:
    """Scale so one content's average AoI utility equals one average link cost.

    Both averages are taken over the RSU copies of ``ledger`` (and over the
    CVs for upload links) so the two utility terms are commensurate.
    """
    base = UtilityParams(params.epsilon, 1.0, params.weight_mode, params.popularity_floor)
    per_content = aoi_utility(ledger, world, base) / max(len(ledger.rsu), 1)
    costs = [
        world.rsu_distance[k] / max(world.popularity.get((k, h), 0.0), params.popularity_floor)
        for (k, h) in ledger.rsu
    ]
    costs += list(world.cv_distance.values())
    if per_content <= 0 or not costs:
        return 1.0
    return float(np.mean(costs)) / per_content


def transition(
    ledger: AoiLedger,
    action: CachingAction,
    world: CachingWorld,
    limits: ChannelLimits | None = None,
    cv_pass_events: Iterable[CvKey] = (),
    popularity_floor: float = 0.01,
) -> tuple[AoiLedger, float]:
    if limits is not None:
        check_feasible(action, ledger, limits)
    nxt = advance_aoi(ledger, action.uploads, action.updates, cv_pass_events)
    return nxt, link_cost(action, world, popularity_floor)


def best_update_reward(
    ledger: AoiLedger, world: CachingWorld, params: UtilityParams, limits: ChannelLimits
) -> float:
    """Best immediate reward from ``ledger`` using RSU updates only.

    Uploads only add cost to the immediate reward, so this is the one-step
    optimum. With uniform weights the reward is additive over RSU copies and
    picking each RSU's best positive-gain update, then the top ``rsu`` of
    those, is exact.
    """
    after_noop = advance_aoi(ledger)
    base = caching_utility(after_noop, NOOP, world, params)
    cap = min(limits.rsu, limits.total)
    if cap == 0 or not ledger.rsu:
        return base

    if params.weight_mode is not WeightMode.UNIFORM:
        action = _greedy_links(ledger, [], _update_candidates(ledger), limits,
                               lambda a: _immediate(ledger, a, world, params))
        return _immediate(ledger, action, world, params)

    eps, w = params.epsilon, params.w
    weight = 1.0 / len(ledger.rsu)
    best: dict[int, float] = {}
    for (k, h), a in ledger.rsu.items():
        p = world.popularity.get((k, h), 0.0)
        fresh, stale = max(ledger.mbs[h], 1), max(a + 1, 1)
        gain = eps * w * weight * p * ledger.aoi_max[h] * (1.0 / fresh - 1.0 / stale)
        gain -= (1.0 - eps) * world.rsu_distance[k] / max(p, params.popularity_floor)
        if gain > best.get(k, 0.0):
            best[k] = gain
    top = sorted(best.values(), reverse=True)[:cap]
    return base + sum(top)


def _immediate(ledger: AoiLedger, action: CachingAction, world: CachingWorld, params: UtilityParams) -> float:
    return caching_utility(advance_aoi(ledger, action.uploads, action.updates), action, world, params)


def _upload_candidates(ledger: AoiLedger) -> list[CvKey]:
    return sorted(ledger.cv)


def _update_candidates(ledger: AoiLedger) -> list[RsuKey]:
    return sorted(ledger.rsu)


def _can_add(action: CachingAction, kind: str, key: tuple[int, int], limits: ChannelLimits) -> bool:
    if action.n_links >= limits.total:
        return False
    if kind == "x":
        if len(action.uploads) >= limits.cv:
            return False
        return all(j != key[0] and h != key[1] for j, h in action.uploads)
    if len(action.updates) >= limits.rsu:
        return False
    return all(k != key[0] for k, _ in action.updates)


def _greedy_links(ledger, uploads, updates, limits, score) -> CachingAction:
    """Add one link at a time while the score strictly improves."""
    candidates = [("x", key) for key in uploads] + [("y", key) for key in updates]
    action = NOOP
    current = score(action)
    while True:
        best_val, best_action = current, None
        for kind, key in candidates:
            if not _can_add(action, kind, key, limits):
                continue
            trial = action.with_upload(key) if kind == "x" else action.with_update(key)
            val = score(trial)
            if val > best_val:
                best_val, best_action = val, trial
        if best_action is None:
            return action
        action, current = best_action, best_val


def lookahead_scorer(
    ledger: AoiLedger,
    world: CachingWorld,
    params: UtilityParams,
    limits: ChannelLimits,
    lookahead: float,
):
    """Score function for uniform weights: utility now plus discounted best next-slot update reward.

    Same value as the generic lookahead score, computed from per-copy
    constants instead of building ledgers.
    """
    eps, floor = params.epsilon, params.popularity_floor
    n = len(ledger.rsu)
    weight = 1.0 / n if n else 0.0
    cap = min(limits.rsu, limits.total)
    pairs = []
    for (k, h), a in sorted(ledger.rsu.items()):
        p = world.popularity.get((k, h), 0.0)
        c = eps * params.w * weight * p * ledger.aoi_max[h]
        pairs.append((k, h, a, c, (1.0 - eps) * world.rsu_distance[k] / max(p, floor)))
    mbs = dict(ledger.mbs)
    cv = dict(ledger.cv)
    up_cost = {j: (1.0 - eps) * d for j, d in world.cv_distance.items()}

    def score(action: CachingAction) -> float:
        mbs_next = {h: a + 1 for h, a in mbs.items()}
        q = 0.0
        for j, h in action.uploads:
            mbs_next[h] = cv[(j, h)]
            q -= up_cost[j]
        updated = set(action.updates)
        best: dict[int, float] = {}
        future = 0.0
        for k, h, a, c, uc in pairs:
            if (k, h) in updated:
                a_next = mbs[h]
                q -= uc
            else:
                a_next = a + 1
            q += c / max(a_next, 1)
            stale = c / max(a_next + 1, 1)
            future += stale
            gain = c / max(mbs_next[h], 1) - stale - uc
            if gain > best.get(k, 0.0):
                best[k] = gain
        if cap:
            future += sum(sorted(best.values(), reverse=True)[:cap])
        return q + lookahead * future

    return score


def myopic_caching_policy(
    ledger: AoiLedger,
    world: CachingWorld,
    params: UtilityParams,
    limits: ChannelLimits = ChannelLimits(),
    lookahead: float = 0.0,
    exhaustive_bound: int = DEFAULT_EXHAUSTIVE_BOUND,
) -> CachingAction:
    """Action maximising this slot's caching utility.

    With ``lookahead > 0`` the score adds ``lookahead`` times the best
    next-slot update reward, which is what gives uploads any value: an
    upload only reaches an RSU one slot later. ``lookahead=0`` is the pure
    one-step maximiser. The search is exhaustive when the per-entity product
    is within ``exhaustive_bound``; otherwise links are added greedily.
    Ties go to the earliest action in canonical order.
    """

    def score(action: CachingAction) -> float:
        nxt = advance_aoi(ledger, action.uploads, action.updates)
        q = caching_utility(nxt, action, world, params)
        if lookahead:
            q += lookahead * best_update_reward(nxt, world, params, limits)
        return q

    if lookahead and params.weight_mode is WeightMode.UNIFORM:
        score = lookahead_scorer(ledger, world, params, limits, lookahead)

    if action_space_bound(ledger) <= exhaustive_bound:
        best_action, best_val = NOOP, -np.inf
        for action in enumerate_actions(ledger, limits):
            val = score(action)
            if val > best_val:
                best_action, best_val = action, val
        return best_action
    return _greedy_links(ledger, _upload_candidates(ledger), _update_candidates(ledger), limits, score)


def aoi_greedy_policy(
    ledger: AoiLedger, world: CachingWorld | None = None, limits: ChannelLimits = ChannelLimits()
) -> CachingAction:
    """Pick the links with the largest raw AoI reduction, ignoring thresholds and cost."""
    options = []
    for (j, h), a in ledger.cv.items():
        options.append((ledger.mbs[h] + 1 - a, "x", (j, h)))
    for (k, h), a in ledger.rsu.items():
        options.append((a + 1 - ledger.mbs[h], "y", (k, h)))
    options.sort(key=lambda o: (-o[0], o[1], o[2]))

    action = NOOP
    for reduction, kind, key in options:
        if reduction <= 0:
            break
        if _can_add(action, kind, key, limits):
            action = action.with_upload(key) if kind == "x" else action.with_update(key)
    return action


def random_policy(
    ledger: AoiLedger,
    world: CachingWorld | None,
    limits: ChannelLimits,
    rng: np.random.Generator,
    exhaustive_bound: int = DEFAULT_EXHAUSTIVE_BOUND,
    max_rejections: int = 10_000,
) -> CachingAction:
    """Uniform draw from the feasible action set.

    Small sets are enumerated; large ones use rejection sampling on the
    per-entity product, which is uniform on the feasible subset. If
    rejection keeps failing the set is enumerated after all.
    """
    if action_space_bound(ledger) > exhaustive_bound:
        cv_choices, rsu_choices = _per_entity_choices(ledger)
        for _ in range(max_rejections):
            ups = [c[int(rng.integers(len(c)))] for c in cv_choices]
            upds = [c[int(rng.integers(len(c)))] for c in rsu_choices]
            action = CachingAction.of([u for u in ups if u], [u for u in upds if u])
            if is_feasible(action, ledger, limits):
                return action
    actions = enumerate_actions(ledger, limits)
    return actions[int(rng.integers(len(actions)))]
