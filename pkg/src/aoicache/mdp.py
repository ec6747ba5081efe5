"""Tabular MDP for small caching instances, solved by value iteration.

The full-road state (every AoI, distance and popularity) is far too large to
tabulate, so exact solving is limited to micro-instances whose AoI values are
saturated at ``aoi_cap`` and whose geometry and popularity are frozen.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .aoi import AoiLedger, CvKey, RsuKey, advance_aoi
from .caching import (
    CachingAction,
    CachingWorld,
    ChannelLimits,
    MdpConfig,
    UtilityParams,
    caching_utility,
    enumerate_actions,
    is_feasible,
)


class StateBudgetError(ValueError):
    """The state space is larger than the configured budget."""


@dataclass
class FiniteMdp:
    """Dense tabular MDP with a fixed global action list.

    ``next_state[s, a, o]`` and ``prob[s, a, o]`` list the outcomes of
    taking action ``a`` in state ``s``; unused outcome slots have
    probability 0. ``feasible[s, a]`` masks actions unavailable in ``s``.
    """

    reward: np.ndarray
    feasible: np.ndarray
    next_state: np.ndarray
    prob: np.ndarray
    state_labels: list[str] = field(default_factory=list)
    action_labels: list[str] = field(default_factory=list)

    @property
    def n_states(self) -> int:
        return self.reward.shape[0]

    @property
    def n_actions(self) -> int:
        return self.reward.shape[1]

    def to_json(self) -> str:
        outcomes = []
        for s in range(self.n_states):
            row = []
            for a in range(self.n_actions):
                if not self.feasible[s, a]:
                    row.append(None)
                    continue
                row.append([[int(n), float(p)] for n, p in zip(self.next_state[s, a], self.prob[s, a]) if p > 0])
            outcomes.append(row)
        doc = {
            "format": "aoicache-mdp/1",
            "states": self.state_labels or [str(s) for s in range(self.n_states)],
            "actions": self.action_labels or [str(a) for a in range(self.n_actions)],
            "rewards": [[float(r) if f else None for r, f in zip(rr, ff)]
                        for rr, ff in zip(self.reward, self.feasible)],
            "transitions": outcomes,
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> FiniteMdp:
        doc = json.loads(text)
        n_s, n_a = len(doc["states"]), len(doc["actions"])
        width = max((len(o) for row in doc["transitions"] for o in row if o), default=1)
        reward = np.zeros((n_s, n_a))
        feasible = np.zeros((n_s, n_a), dtype=bool)
        nxt = np.zeros((n_s, n_a, width), dtype=np.int64)
        prob = np.zeros((n_s, n_a, width))
        for s in range(n_s):
            for a in range(n_a):
                outs = doc["transitions"][s][a]
                if outs is None:
                    continue
                feasible[s, a] = True
                reward[s, a] = doc["rewards"][s][a]
                for o, (n, p) in enumerate(outs):
                    nxt[s, a, o] = n
                    prob[s, a, o] = p
        return cls(reward, feasible, nxt, prob, list(doc["states"]), list(doc["actions"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> FiniteMdp:
        return cls.from_json(Path(path).read_text())


def bellman_backup(mdp: FiniteMdp, values: np.ndarray, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """One synchronous sweep: returns (new values, greedy action per state).

    Ties go to the lowest action index.
    """
    expected = (mdp.prob * values[mdp.next_state]).sum(axis=2)
    q = mdp.reward + gamma * expected
    q = np.where(mdp.feasible, q, -np.inf)
    policy = np.argmax(q, axis=1)
    return q[np.arange(mdp.n_states), policy], policy


@dataclass
class ValueIterationResult:
    values: np.ndarray
    policy: np.ndarray
    residuals: list[float]

    @property
    def sweeps(self) -> int:
        return len(self.residuals)


def value_iteration(mdp: FiniteMdp, config: MdpConfig = MdpConfig()) -> ValueIterationResult:
    """Iterate the Bellman optimality operator from V = 0 until the sup-norm change < theta.

    Sweeps are synchronous, so after n sweeps the table holds the n-slot
    discounted optimum; the residual sequence is then non-increasing.
    """
    if mdp.n_states > config.max_states:
        raise StateBudgetError(f"{mdp.n_states} states exceeds budget of {config.max_states}")
    values = np.zeros(mdp.n_states)
    residuals = []
    policy = np.zeros(mdp.n_states, dtype=np.int64)
    for _ in range(config.max_sweeps):
        new, policy = bellman_backup(mdp, values, config.gamma)
        residual = float(np.max(np.abs(new - values))) if mdp.n_states else 0.0
        residuals.append(residual)
        values = new
        if residual < config.theta:
            break
    _, policy = bellman_backup(mdp, values, config.gamma)
    return ValueIterationResult(values, policy, residuals)


def finite_horizon(mdp: FiniteMdp, gamma: float, horizon: int) -> tuple[np.ndarray, np.ndarray]:
    """Value and first-step policy of the ``horizon``-slot problem (V_0 = 0)."""
    values = np.zeros(mdp.n_states)
    policy = np.zeros(mdp.n_states, dtype=np.int64)
    for _ in range(horizon):
        values, policy = bellman_backup(mdp, values, gamma)
    return values, policy


@dataclass(frozen=True)
class MicroInstance:
    """A caching problem small enough to tabulate.

    ``rsu_regions[k]`` lists the regions RSU k caches. CV content for each
    (CV, region) pair appears with probability ``arrival_prob`` per slot.
    """

    aoi_max: Mapping[int, int]
    rsu_regions: Mapping[int, tuple[int, ...]]
    n_cv: int
    world: CachingWorld
    params: UtilityParams = UtilityParams()
    limits: ChannelLimits = ChannelLimits()
    aoi_cap: int = 4
    arrival_prob: float = 0.0

    def __post_init__(self):
        if any(a > self.aoi_cap for a in self.aoi_max.values()):
            raise ValueError("aoi_cap must be at least every aoi_max")

    @property
    def cv_keys(self) -> list[CvKey]:
        return [(j, h) for j in range(self.n_cv) for h in sorted(self.aoi_max)]

    @property
    def rsu_keys(self) -> list[RsuKey]:
        return sorted((k, h) for k, hs in self.rsu_regions.items() for h in hs)

    def _radices(self) -> list[int]:
        radices = [self.aoi_max[h] + 1 for _, h in self.cv_keys]
        radices += [self.aoi_cap] * (len(self.aoi_max) + len(self.rsu_keys))
        return radices

    @property
    def n_states(self) -> int:
        return int(np.prod(self._radices(), dtype=np.int64))

    def ledger(self, state: int) -> AoiLedger:
        digits = []
        for r in reversed(self._radices()):
            digits.append(state % r)
            state //= r
        digits.reverse()
        it = iter(digits)
        cv = {}
        for key in self.cv_keys:
            d = next(it)
            if d:
                cv[key] = d
        mbs = {h: next(it) + 1 for h in sorted(self.aoi_max)}
        rsu = {key: next(it) + 1 for key in self.rsu_keys}
        return AoiLedger(cv=cv, mbs=mbs, rsu=rsu, aoi_max=dict(self.aoi_max), n_cv=self.n_cv)

    def state(self, ledger: AoiLedger) -> int:
        """Index of ``ledger`` after saturating MBS/RSU AoI at ``aoi_cap``."""
        cap = self.aoi_cap
        digits = [ledger.cv.get(key, 0) for key in self.cv_keys]
        digits += [min(ledger.mbs[h], cap) - 1 for h in sorted(self.aoi_max)]
        digits += [min(ledger.rsu[key], cap) - 1 for key in self.rsu_keys]
        idx = 0
        for d, r in zip(digits, self._radices()):
            idx = idx * r + d
        return idx

    def saturate(self, ledger: AoiLedger) -> AoiLedger:
        return self.ledger(self.state(ledger))

    def full_ledger(self) -> AoiLedger:
        """A ledger where every CV holds every content; its actions are the global list."""
        return AoiLedger(
            cv={key: 1 for key in self.cv_keys},
            mbs={h: 1 for h in self.aoi_max},
            rsu={key: 1 for key in self.rsu_keys},
            aoi_max=dict(self.aoi_max),
            n_cv=self.n_cv,
        )

    def actions(self) -> list[CachingAction]:
        return enumerate_actions(self.full_ledger(), self.limits)

    def arrival_outcomes(self) -> list[tuple[tuple[CvKey, ...], float]]:
        """Every subset of (CV, region) pairs receiving fresh content, with its probability."""
        rho = self.arrival_prob
        keys = self.cv_keys
        if rho <= 0.0 or not keys:
            return [((), 1.0)]
        if rho >= 1.0:
            return [(tuple(keys), 1.0)]
        out = []
        for mask in itertools.product((False, True), repeat=len(keys)):
            hits = tuple(k for k, m in zip(keys, mask) if m)
            p = 1.0
            for m in mask:
                p *= rho if m else 1.0 - rho
            out.append((hits, p))
        return out

    def step(self, ledger: AoiLedger, action: CachingAction) -> list[tuple[AoiLedger, float]]:
        """Saturated successor ledgers of (ledger, action) with their probabilities."""
        return [
            (self.saturate(advance_aoi(ledger, action.uploads, action.updates, hits)), p)
            for hits, p in self.arrival_outcomes()
        ]

    def reward(self, ledger: AoiLedger, action: CachingAction) -> float:
        nxt = advance_aoi(ledger, action.uploads, action.updates)
        return caching_utility(nxt, action, self.world, self.params)


def state_label(ledger: AoiLedger) -> str:
    parts = [f"cv{j}.{h}={a}" for (j, h), a in sorted(ledger.cv.items())]
    parts += [f"mbs.{h}={a}" for h, a in sorted(ledger.mbs.items())]
    parts += [f"rsu{k}.{h}={a}" for (k, h), a in sorted(ledger.rsu.items())]
    return ";".join(parts)


def action_label(action: CachingAction) -> str:
    ups = ",".join(f"x{j}.{h}" for j, h in action.uploads)
    upds = ",".join(f"y{k}.{h}" for k, h in action.updates)
    return f"[{ups}|{upds}]"


def build_micro_mdp(inst: MicroInstance, config: MdpConfig = MdpConfig()) -> tuple[FiniteMdp, list[CachingAction]]:
    n_s = inst.n_states
    if n_s > config.max_states:
        raise StateBudgetError(f"{n_s} states exceeds budget of {config.max_states}")
    actions = inst.actions()
    outcomes = inst.arrival_outcomes()
    n_a, n_o = len(actions), len(outcomes)

    reward = np.zeros((n_s, n_a))
    feasible = np.zeros((n_s, n_a), dtype=bool)
    nxt = np.zeros((n_s, n_a, n_o), dtype=np.int64)
    prob = np.zeros((n_s, n_a, n_o))
    labels = []
    for s in range(n_s):
        led = inst.ledger(s)
        labels.append(state_label(led))
        for a, action in enumerate(actions):
            if not is_feasible(action, led, inst.limits):
                continue
            feasible[s, a] = True
            after = advance_aoi(led, action.uploads, action.updates)
            reward[s, a] = caching_utility(after, action, inst.world, inst.params)
            for o, (hits, p) in enumerate(outcomes):
                if hits:
                    cv = dict(after.cv)
                    cv.update(dict.fromkeys(hits, 1))
                    succ = AoiLedger(cv=cv, mbs=after.mbs, rsu=after.rsu, aoi_max=after.aoi_max, n_cv=after.n_cv)
                else:
                    succ = after
                nxt[s, a, o] = inst.state(succ)
                prob[s, a, o] = p
    mdp = FiniteMdp(reward, feasible, nxt, prob, labels, [action_label(a) for a in actions])
    return mdp, actions
