"""Stage 2: per-UV waiting queues and the drift-plus-penalty service rule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence


@dataclass(frozen=True)
class RequestQueue:
    """Accumulated waiting time of one UV's outstanding request."""

    uv_id: int
    rsu_id: int
    target_region: int
    backlog: float = 0.0
    created_at: int = 0

    @property
    def request(self) -> dict[int, int]:
        return {self.target_region: 1}


@dataclass(frozen=True)
class DppParams:
    V: float = 1.0
    h_uv_limit: int | None = None
    enforce_staleness: bool = True

    def __post_init__(self):
        if self.V < 0 or math.isnan(self.V):
            raise ValueError(f"V must be nonnegative, got {self.V}")
        if self.h_uv_limit is not None and self.h_uv_limit < 0:
            raise ValueError("h_uv_limit must be nonnegative")


@dataclass(frozen=True)
class ServiceAction:
    alpha: Mapping[int, int] = field(default_factory=dict)
    stale_blocked: tuple[int, ...] = ()

    @property
    def served(self) -> list[int]:
        return sorted(i for i, a in self.alpha.items() if a)


def queue_step(queue: RequestQueue, served: int, uv_region: int) -> RequestQueue | None:
    """Advance one queue by a slot; ``None`` means the queue is gone.

    A UV past its target region drops the queue. Service flushes the whole
    backlog and fulfils the request, so the queue is dropped as well.
    Otherwise one slot of waiting is added.
    """
    if uv_region > queue.target_region:
        return None
    departure = queue.backlog if served else 0.0
    backlog = max(queue.backlog - departure, 0.0) + 1.0
    if served:
        return None
    return replace(queue, backlog=backlog)


def received_aoi(rsu_content_aoi: int, served: int) -> int:
    return rsu_content_aoi + 1 if served else 0


def service_cost(served: int, distance: float) -> float:
    return distance if served else 0.0


def dpp_score(backlog: float, distance: float, V: float) -> float:
    """Objective of serving minus not serving; negative means serve."""
    return V * distance - backlog * backlog


def dpp_decide(
    queues: Sequence[RequestQueue],
    distances: Mapping[int, float],
    rsu_aoi: Mapping[int, int],
    params: DppParams,
    aoi_max: Mapping[int, int] | None = None,
) -> ServiceAction:
    """Per-UV drift-plus-penalty decision for the live queues of one RSU.

    ``distances`` is keyed by uv_id and ``rsu_aoi`` by region. Serving
    departs the whole backlog Q at cost d, so a UV is served iff
    Q^2 > V d. With staleness enforcement, content that would arrive older
    than its region's limit is withheld.
    """
    candidates = []
    blocked = []
    for q in queues:
        score = dpp_score(q.backlog, distances[q.uv_id], params.V)
        if score >= 0:
            continue
        if params.enforce_staleness:
            if aoi_max is None:
                raise ValueError("aoi_max is required when enforce_staleness is set")
            if received_aoi(rsu_aoi[q.target_region], 1) > aoi_max[q.target_region]:
                blocked.append(q.uv_id)
                continue
        candidates.append((score, q.uv_id))
    candidates.sort()
    if params.h_uv_limit is not None:
        candidates = candidates[: params.h_uv_limit]
    alpha = {q.uv_id: 0 for q in queues}
    for _, uv in candidates:
        alpha[uv] = 1
    return ServiceAction(alpha, tuple(sorted(blocked)))


def latency_only_policy(queues: Sequence[RequestQueue], h_uv_limit: int | None = None) -> ServiceAction:
    order = sorted(q.uv_id for q in queues)
    chosen = set(order if h_uv_limit is None else order[:h_uv_limit])
    return ServiceAction({uv: int(uv in chosen) for uv in order})


def cost_only_policy(queues: Sequence[RequestQueue]) -> ServiceAction:
    return ServiceAction({q.uv_id: 0 for q in queues})


@dataclass(frozen=True)
class DriftReport:
    slots: int
    violations: int
    constant: float
    max_gap: float
    mean_drift_plus_penalty: float

    @property
    def ok(self) -> bool:
        return self.violations == 0


def drift_bound_check(
    trajectories: Iterable[Sequence[tuple[float, ...]]],
    V: float = 0.0,
    q0: float = 0.0,
    rtol: float = 1e-12,
) -> DriftReport:
    """Check the quadratic-Lyapunov drift bound slot by slot.

    Each trajectory is a sequence of ``(arrival, departure)`` or
    ``(arrival, departure, cost)`` tuples applied to a queue starting at
    ``q0``. For L(Q) = Q^2 / 2 the bound is
    L(Q') - L(Q) <= (a^2 + b^2) / 2 + Q (a - b).
    """
    slots = violations = 0
    constant = 0.0
    max_gap = -math.inf
    dpp_total = 0.0
    for traj in trajectories:
        q = q0
        for step in traj:
            a, b = float(step[0]), float(step[1])
            cost = float(step[2]) if len(step) > 2 else 0.0
            q_next = max(q - b, 0.0) + a
            drift = 0.5 * (q_next * q_next - q * q)
            half_sq = 0.5 * (a * a + b * b)
            bound = half_sq + q * (a - b)
            gap = drift - bound
            if gap > rtol * max(1.0, abs(bound), q * q):
                violations += 1
            constant = max(constant, half_sq)
            max_gap = max(max_gap, gap)
            dpp_total += drift + V * cost
            slots += 1
            q = q_next
    return DriftReport(
        slots=slots,
        violations=violations,
        constant=constant,
        max_gap=0.0 if slots == 0 else max_gap,
        mean_drift_plus_penalty=dpp_total / slots if slots else 0.0,
    )
