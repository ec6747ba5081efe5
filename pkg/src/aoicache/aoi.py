"""Road geometry, vehicle state and the three-layer AoI ledger.

AoI values are integers counted in slots. A CV-held content that is not
present is simply missing from ``AoiLedger.cv``; it is never stored as 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping

import numpy as np

SLOT_SECONDS = 1.0
LANE_WIDTH = 3.5
RSU_LATERAL_OFFSET = 10.0
MBS_LATERAL_OFFSET = 50.0

Point = tuple[float, float]
CvKey = tuple[int, int]
RsuKey = tuple[int, int]


class ContractError(ValueError):
    """An operation was called outside its precondition."""


class InfeasibleActionError(ValueError):
    """A caching action violates the feasibility constraints."""


class RoadCondition(str, Enum):
    NORMAL = "normal"
    TRAFFIC_JAM = "traffic_jam"
    ACCIDENT = "accident"
    CROWDED = "crowded"


DEFAULT_AOI_MAX = {
    RoadCondition.NORMAL: 20,
    RoadCondition.TRAFFIC_JAM: 10,
    RoadCondition.ACCIDENT: 8,
    RoadCondition.CROWDED: 15,
}


@dataclass(frozen=True)
class RegionKind:
    kind: RoadCondition
    aoi_max: int

    def __post_init__(self):
        if self.aoi_max <= 0:
            raise ContractError(f"aoi_max must be positive, got {self.aoi_max}")

    @classmethod
    def default(cls, kind: RoadCondition | str) -> RegionKind:
        kind = RoadCondition(kind)
        return cls(kind, DEFAULT_AOI_MAX[kind])


def kmh_to_m_per_slot(kmh: float, slot_seconds: float = SLOT_SECONDS) -> float:
    return kmh * 1000.0 / 3600.0 * slot_seconds


@dataclass(frozen=True)
class RoadLayout:
    """Straight one-way road split into equal regions, tiled by RSU spans."""

    total_length: float
    region_length: float
    regions: tuple[RegionKind, ...]
    rsu_positions: tuple[Point, ...]
    mbs_position: Point
    lane_speeds: tuple[float, ...]

    def __post_init__(self):
        n = len(self.regions)
        if n == 0 or not self.rsu_positions:
            raise ContractError("layout needs at least one region and one RSU")
        if not math.isclose(self.total_length, self.region_length * n):
            raise ContractError(
                f"total_length {self.total_length} != region_length "
                f"{self.region_length} x {n} regions"
            )
        if n % len(self.rsu_positions):
            raise ContractError(
                f"{n} regions cannot be split evenly over {len(self.rsu_positions)} RSUs"
            )

    @property
    def n_regions(self) -> int:
        return len(self.regions)

    @property
    def n_rsu(self) -> int:
        return len(self.rsu_positions)

    @property
    def regions_per_rsu(self) -> int:
        return self.n_regions // self.n_rsu

    @property
    def rsu_span(self) -> float:
        return self.region_length * self.regions_per_rsu

    @property
    def aoi_max(self) -> dict[int, int]:
        return {h: r.aoi_max for h, r in enumerate(self.regions)}

    def regions_of_rsu(self, k: int) -> range:
        per = self.regions_per_rsu
        return range(k * per, (k + 1) * per)

    def rsu_of_region(self, h: int) -> int:
        return h // self.regions_per_rsu

    def rsu_at(self, position: float) -> int:
        return self.rsu_of_region(region_at(self, position))

    def lane_point(self, position: float, lane: int) -> Point:
        return (position, lane * LANE_WIDTH)


def build_layout(
    kinds: Iterable[RegionKind],
    n_rsu: int,
    region_length: float = 100.0,
    lane_speeds_kmh: Iterable[float] = (30.0, 50.0, 80.0),
    slot_seconds: float = SLOT_SECONDS,
) -> RoadLayout:
    """MBS sits mid-road 50 m off the carriageway; RSUs at span centres, 10 m off."""
    kinds = tuple(kinds)
    total = region_length * len(kinds)
    if n_rsu <= 0 or len(kinds) % n_rsu:
        raise ContractError(f"{len(kinds)} regions cannot be split evenly over {n_rsu} RSUs")
    span = total / n_rsu
    rsus = tuple((span * (k + 0.5), RSU_LATERAL_OFFSET) for k in range(n_rsu))
    speeds = tuple(kmh_to_m_per_slot(s, slot_seconds) for s in lane_speeds_kmh)
    return RoadLayout(
        total_length=total,
        region_length=region_length,
        regions=kinds,
        rsu_positions=rsus,
        mbs_position=(total / 2.0, MBS_LATERAL_OFFSET),
        lane_speeds=speeds,
    )


def region_at(layout: RoadLayout, position: float) -> int:
    if not 0.0 <= position < layout.total_length:
        raise ContractError(
            f"position {position} outside road [0, {layout.total_length})"
        )
    return min(int(position // layout.region_length), layout.n_regions - 1)


def link_distance(a: Point, b: Point) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


class Role(str, Enum):
    UV = "uv"
    CV = "cv"


@dataclass(frozen=True)
class VehicleState:
    id: int
    role: Role
    position: float
    lane: int
    speed: float


@dataclass(frozen=True)
class AoiLedger:
    """AoI of every content copy: CV-held, MBS and RSU caches.

    ``aoi_max`` maps region -> validity threshold and drives CV expiry.
    """

    cv: Mapping[CvKey, int]
    mbs: Mapping[int, int]
    rsu: Mapping[RsuKey, int]
    aoi_max: Mapping[int, int]
    n_cv: int = 0

    def __post_init__(self):
        for (j, h), a in self.cv.items():
            if not 1 <= a <= self.aoi_max[h]:
                raise ContractError(f"cv content ({j},{h}) AoI {a} outside [1, {self.aoi_max[h]}]")
            if not 0 <= j < self.n_cv:
                raise ContractError(f"cv index {j} outside [0, {self.n_cv})")

    @property
    def rsu_ids(self) -> list[int]:
        return sorted({k for k, _ in self.rsu})

    def cv_contents(self, j: int) -> list[int]:
        return sorted(h for (jj, h) in self.cv if jj == j)

    def rsu_regions(self, k: int) -> list[int]:
        return sorted(h for (kk, h) in self.rsu if kk == k)

    def exceed_count(self) -> int:
        return sum(1 for (_, h), a in self.rsu.items() if a > self.aoi_max[h])


def initial_ledger(layout: RoadLayout, n_cv: int, rng: np.random.Generator) -> AoiLedger:
    """MBS and RSU copies start at a random age in [1, aoi_max]; CVs start empty."""
    amax = layout.aoi_max
    mbs = {h: int(rng.integers(1, amax[h] + 1)) for h in range(layout.n_regions)}
    rsu = {}
    for k in range(layout.n_rsu):
        for h in layout.regions_of_rsu(k):
            rsu[(k, h)] = int(rng.integers(1, amax[h] + 1))
    return AoiLedger(cv={}, mbs=mbs, rsu=rsu, aoi_max=amax, n_cv=n_cv)


def advance_aoi(
    ledger: AoiLedger,
    uploads: Iterable[CvKey] = (),
    updates: Iterable[RsuKey] = (),
    cv_pass_events: Iterable[CvKey] = (),
) -> AoiLedger:
    """One-slot AoI update for all three layers.

    Uploads hand the CV copy to the MBS (the CV loses it); updates copy the
    MBS value of the *current* slot into the RSU. A CV copy already at its
    region's limit and not uploaded is deleted. Pass events create fresh
    content (AoI 1), overwriting whatever the CV still held for that region.
    """
    uploads = set(uploads)
    updates = set(updates)
    for key in uploads:
        if key not in ledger.cv:
            raise InfeasibleActionError(f"upload of absent CV content {key}")
    for key in updates:
        if key not in ledger.rsu:
            raise InfeasibleActionError(f"update of uncached RSU content {key}")

    cv: dict[CvKey, int] = {}
    for key, a in ledger.cv.items():
        if key in uploads or a >= ledger.aoi_max[key[1]]:
            continue
        cv[key] = a + 1
    for j, h in cv_pass_events:
        cv[(j, h)] = 1

    mbs = {h: a + 1 for h, a in ledger.mbs.items()}
    for j, h in uploads:
        mbs[h] = ledger.cv[(j, h)]

    rsu = {}
    for (k, h), a in ledger.rsu.items():
        rsu[(k, h)] = ledger.mbs[h] if (k, h) in updates else a + 1

    return AoiLedger(cv=cv, mbs=mbs, rsu=rsu, aoi_max=ledger.aoi_max, n_cv=ledger.n_cv)
