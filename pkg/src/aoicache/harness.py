"""Discrete-time road simulation running both stages slot by slot."""

from __future__ import annotations

import csv
import io
import math
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from .aoi import (
    AoiLedger,
    RegionKind,
    Role,
    RoadCondition,
    RoadLayout,
    VehicleState,
    build_layout,
    initial_ledger,
    link_distance,
    region_at,
)
from .caching import (
    CachingAction,
    CachingWorld,
    ChannelLimits,
    UtilityParams,
    aoi_greedy_policy,
    calibrate_w,
    myopic_caching_policy,
    random_policy,
    transition,
)
from .service import (
    DppParams,
    RequestQueue,
    cost_only_policy,
    dpp_decide,
    latency_only_policy,
    queue_step,
    received_aoi,
    service_cost,
)

SCHEMA_VERSION = 1
STAGE1_POLICIES = ("proposed", "aoi-greedy", "random")
STAGE2_POLICIES = ("dpp", "latency-only", "cost-only")
V_PRESETS = {"light": 0.1, "normal": 1.0, "heavy": 10.0}


class ConfigError(ValueError):
    """Scenario configuration violates an invariant."""


@dataclass(frozen=True)
class RoadConfig:
    total_length: float = 2000.0
    region_length: float = 100.0
    n_rsu: int = 4
    lane_speeds_kmh: tuple[float, ...] = (30.0, 50.0, 80.0)
    slot_seconds: float = 1.0


@dataclass(frozen=True)
class RegionConfig:
    aoi_max: dict = field(default_factory=lambda: {
        "normal": 20, "traffic_jam": 10, "accident": 8, "crowded": 15})
    kinds: tuple[str, ...] | None = None


@dataclass(frozen=True)
class VehicleConfig:
    n_uv: int = 12
    n_cv: int = 3


@dataclass(frozen=True)
class RequestConfig:
    rho: float = 0.1
    popularity_window: int = 20


@dataclass(frozen=True)
class Stage1Config:
    policy: str = "proposed"
    epsilon: float = 0.5
    w: float | str = "auto"
    weight_mode: str = "uniform"
    popularity_floor: float = 0.01
    h_total: int = 6
    h_cv: int = 3
    h_rsu: int = 3
    lookahead: float = 0.9
    exhaustive_bound: int = 2_000


@dataclass(frozen=True)
class Stage2Config:
    policy: str = "dpp"
    V: float | str = "normal"
    h_uv: int | None = None
    enforce_staleness: bool = True


@dataclass(frozen=True)
class ScenarioConfig:
    road: RoadConfig = RoadConfig()
    regions: RegionConfig = RegionConfig()
    vehicles: VehicleConfig = VehicleConfig()
    requests: RequestConfig = RequestConfig()
    stage1: Stage1Config = Stage1Config()
    stage2: Stage2Config = Stage2Config()
    horizon: int = 100
    seed: int = 7

    def __post_init__(self):
        validate(self)

    @property
    def n_regions(self) -> int:
        return round(self.road.total_length / self.road.region_length)

    def with_overrides(self, **changes) -> ScenarioConfig:
        """Shallow overrides; nested sections accept dicts of field changes."""
        out = {}
        for key, value in changes.items():
            current = getattr(self, key)
            if isinstance(value, dict) and hasattr(current, "__dataclass_fields__"):
                value = replace(current, **value)
            out[key] = value
        return replace(self, **out)


def _fail(msg: str) -> None:
    raise ConfigError(msg)


def validate(cfg: ScenarioConfig) -> None:
    road = cfg.road
    if road.region_length <= 0 or road.total_length <= 0:
        _fail("road.total_length and road.region_length must be positive")
    ratio = road.total_length / road.region_length
    if not math.isclose(ratio, round(ratio)) or round(ratio) < 1:
        _fail(f"road.region_length {road.region_length} does not divide "
              f"road.total_length {road.total_length}")
    if road.n_rsu < 1:
        _fail("road.n_rsu must be positive")
    if round(ratio) % road.n_rsu:
        _fail(f"{round(ratio)} regions cannot be tiled by {road.n_rsu} equal RSU spans")
    if not road.lane_speeds_kmh or any(s < 0 for s in road.lane_speeds_kmh):
        _fail("road.lane_speeds_kmh must be a nonempty list of nonnegative speeds")
    if road.slot_seconds <= 0:
        _fail("road.slot_seconds must be positive")
    known = {c.value for c in RoadCondition}
    for kind, amax in cfg.regions.aoi_max.items():
        if kind not in known:
            _fail(f"regions.aoi_max: unknown region kind {kind!r}")
        if not isinstance(amax, int) or amax <= 0:
            _fail(f"regions.aoi_max.{kind} must be a positive integer")
    if cfg.regions.kinds is not None:
        if len(cfg.regions.kinds) != round(ratio):
            _fail(f"regions.kinds lists {len(cfg.regions.kinds)} regions, road has {round(ratio)}")
        for kind in cfg.regions.kinds:
            if kind not in cfg.regions.aoi_max:
                _fail(f"regions.kinds: no aoi_max for kind {kind!r}")
    if cfg.vehicles.n_uv < 1 or cfg.vehicles.n_cv < 1:
        _fail("vehicles.n_uv and vehicles.n_cv must be positive")
    if not 0.0 <= cfg.requests.rho <= 1.0:
        _fail("requests.rho must lie in [0, 1]")
    if cfg.requests.popularity_window < 1:
        _fail("requests.popularity_window must be positive")
    s1 = cfg.stage1
    if s1.policy not in STAGE1_POLICIES:
        _fail(f"stage1.policy must be one of {STAGE1_POLICIES}")
    if not 0.0 <= s1.epsilon <= 1.0:
        _fail("stage1.epsilon must lie in [0, 1]")
    if s1.w != "auto" and (isinstance(s1.w, str) or s1.w <= 0):
        _fail("stage1.w must be 'auto' or a positive number")
    if s1.weight_mode not in ("uniform", "aoi_share"):
        _fail("stage1.weight_mode must be 'uniform' or 'aoi_share'")
    if s1.popularity_floor <= 0:
        _fail("stage1.popularity_floor must be positive")
    if min(s1.h_total, s1.h_cv, s1.h_rsu) < 0:
        _fail("stage1 channel limits must be nonnegative")
    if not 0.0 <= s1.lookahead < 1.0:
        _fail("stage1.lookahead must lie in [0, 1)")
    s2 = cfg.stage2
    if s2.policy not in STAGE2_POLICIES:
        _fail(f"stage2.policy must be one of {STAGE2_POLICIES}")
    if isinstance(s2.V, str):
        if s2.V not in V_PRESETS:
            _fail(f"stage2.V preset must be one of {tuple(V_PRESETS)}")
    elif s2.V < 0 or math.isnan(s2.V):
        _fail(f"stage2.V must be nonnegative, got {s2.V}")
    if s2.h_uv is not None and s2.h_uv < 0:
        _fail("stage2.h_uv must be nonnegative")
    if cfg.horizon < 0:
        _fail("horizon must be nonnegative")


def preset(name: str) -> ScenarioConfig:
    """``highway``: 2 km, 4 RSUs, 20 regions. ``single-rsu``: 1 RSU, 5 regions, 3 UVs always requesting."""
    if name == "highway":
        return ScenarioConfig()
    if name == "single-rsu":
        return ScenarioConfig(
            road=RoadConfig(total_length=500.0, n_rsu=1),
            vehicles=VehicleConfig(n_uv=3, n_cv=3),
            requests=RequestConfig(rho=1.0),
        )
    raise ConfigError(f"unknown preset {name!r}")


def make_layout(cfg: ScenarioConfig, rng: np.random.Generator) -> RoadLayout:
    names = cfg.regions.kinds
    if names is None:
        pool = sorted(cfg.regions.aoi_max)
        names = tuple(pool[int(i)] for i in rng.integers(len(pool), size=cfg.n_regions))
    kinds = tuple(RegionKind(RoadCondition(n), cfg.regions.aoi_max[n]) for n in names)
    return build_layout(kinds, cfg.road.n_rsu, cfg.road.region_length,
                        cfg.road.lane_speeds_kmh, cfg.road.slot_seconds)


def v_base(layout: RoadLayout) -> float:
    """(Mean region traversal slots / 2)^2 over the mean UV-RSU distance.

    With this V a UV at the mean distance is served at V = V0 once it has
    waited half a region traversal.
    """
    span = layout.rsu_span
    xs = np.arange(0.5, span, 1.0)
    dists = [link_distance(layout.rsu_positions[0], layout.lane_point(x, lane))
             for lane in range(len(layout.lane_speeds)) for x in xs]
    moving = [s for s in layout.lane_speeds if s > 0]
    traversal = float(np.mean([layout.region_length / s for s in moving])) if moving else 1.0
    return traversal ** 2 / 4.0 / float(np.mean(dists))


def resolve_v(value: float | str, layout: RoadLayout) -> float:
    if isinstance(value, str):
        return V_PRESETS[value] * v_base(layout)
    return float(value)


@dataclass(frozen=True)
class WorldState:
    clock: int
    vehicles: tuple[VehicleState, ...]
    ledger: AoiLedger
    queues: dict[int, RequestQueue]
    popularity: dict[tuple[int, int], float]
    history: tuple[tuple[int, int, int], ...] = ()

    def uvs(self) -> list[VehicleState]:
        return [v for v in self.vehicles if v.role is Role.UV]

    def cvs(self) -> list[VehicleState]:
        return [v for v in self.vehicles if v.role is Role.CV]


def step_world(world: WorldState, layout: RoadLayout) -> tuple[WorldState, list[tuple[int, int]]]:
    """Move every vehicle one slot, wrapping at the road end.

    Returns the new world and the (cv, region) pairs of regions a CV
    finished traversing this slot.
    """
    length, reg = layout.total_length, layout.region_length
    moved = []
    events = []
    for v in world.vehicles:
        raw = v.position + v.speed
        new = raw - length * math.floor(raw / length)
        if new >= length:
            new = 0.0
        if v.role is Role.CV:
            start = int(v.position // reg)
            crossed = int(raw // reg) - start
            for c in range(crossed):
                events.append((v.id, (start + c) % layout.n_regions))
        moved.append(replace(v, position=new))
    return replace(world, clock=world.clock + 1, vehicles=tuple(moved)), events


def request_targets(layout: RoadLayout, position: float) -> list[int]:
    """Regions of the UV's current RSU at or ahead of its position."""
    here = region_at(layout, position)
    last = layout.regions_of_rsu(layout.rsu_of_region(here))[-1]
    return list(range(here, last + 1))


def generate_requests(
    world: WorldState, layout: RoadLayout, rho: float, draws: np.ndarray, choices: np.ndarray
) -> list[RequestQueue]:
    """New requests from idle UVs; ``draws``/``choices`` hold one uniform per UV."""
    out = []
    for idx, uv in enumerate(world.uvs()):
        if uv.id in world.queues or draws[idx] >= rho:
            continue
        targets = request_targets(layout, uv.position)
        target = targets[min(int(choices[idx] * len(targets)), len(targets) - 1)]
        out.append(RequestQueue(uv.id, layout.rsu_of_region(target), target, 0.0, world.clock))
    return out


def update_popularity(
    layout: RoadLayout, history: Iterable[tuple[int, int, int]], now: int, window: int, floor: float
) -> dict[tuple[int, int], float]:
    """Smoothed request share per (RSU, region) over the last ``window`` slots.

    ``history`` holds (slot, rsu, region) request records.
    """
    lam = floor * window
    counts: dict[tuple[int, int], int] = {}
    for slot, k, h in history:
        if now - slot < window:
            counts[(k, h)] = counts.get((k, h), 0) + 1
    pop = {}
    for k in range(layout.n_rsu):
        regions = list(layout.regions_of_rsu(k))
        total = sum(counts.get((k, h), 0) for h in regions)
        raw = [(counts.get((k, h), 0) + lam) / (total + lam * len(regions)) for h in regions]
        norm = sum(raw)
        for h, p in zip(regions, raw):
            pop[(k, h)] = p / norm
    return pop


def caching_view(world: WorldState, layout: RoadLayout) -> CachingWorld:
    mbs = layout.mbs_position
    cv_d = {v.id: link_distance(layout.lane_point(v.position, v.lane), mbs) for v in world.cvs()}
    rsu_d = {k: link_distance(p, mbs) for k, p in enumerate(layout.rsu_positions)}
    return CachingWorld(cv_d, rsu_d, dict(world.popularity))


@dataclass(frozen=True)
class ServiceEvent:
    slot: int
    uv_id: int
    rsu_id: int
    region: int
    alpha: int
    backlog: float
    cost: float
    received_aoi: int
    stale_blocked: bool


@dataclass
class SlotRow:
    slot: int
    uploads: int
    updates: int
    caching_cost: float
    service_cost: float
    aoi_exceed: int
    live_requests: int
    services: int
    cost_save: int
    stale_blocks: int
    expired: int
    total_backlog: float
    mean_rsu_aoi: float
    rsu_aoi: dict[tuple[int, int], int]
    backlog: dict[int, float]


SLOT_COLUMNS = (
    "slot", "uploads", "updates", "caching_cost", "service_cost", "aoi_exceed",
    "live_requests", "services", "cost_save", "stale_blocks", "expired",
    "total_backlog", "mean_rsu_aoi",
)
SUMMARY_KEYS = (
    "slots", "uploads", "updates", "aoi_max_exceed", "caching_cost", "requests",
    "pending_request_slots", "service_success", "cost_save", "stale_blocks",
    "expired_requests", "service_cost",
)
EVENT_COLUMNS = tuple(ServiceEvent.__dataclass_fields__)


@dataclass
class MetricsLog:
    rows: list[SlotRow] = field(default_factory=list)
    events: list[ServiceEvent] = field(default_factory=list)
    kind_stats: list[dict] = field(default_factory=list)
    counters: dict[str, float] = field(default_factory=lambda: dict.fromkeys(SUMMARY_KEYS, 0))
    meta: dict[str, object] = field(default_factory=dict)

    def add(self, row: SlotRow, events: list[ServiceEvent], requests: int) -> None:
        self.rows.append(row)
        self.events.extend(events)
        c = self.counters
        c["slots"] += 1
        c["uploads"] += row.uploads
        c["updates"] += row.updates
        c["aoi_max_exceed"] += row.aoi_exceed
        c["caching_cost"] += row.caching_cost
        c["requests"] += requests
        c["pending_request_slots"] += row.live_requests
        c["service_success"] += row.services
        c["cost_save"] += row.cost_save
        c["stale_blocks"] += row.stale_blocks
        c["expired_requests"] += row.expired
        c["service_cost"] += row.service_cost

    def slots_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# aoicache slots.csv schema v{SCHEMA_VERSION}\n")
        writer = csv.writer(buf, lineterminator="\n")
        pairs = sorted(self.rows[0].rsu_aoi) if self.rows else []
        uvs = sorted(self.rows[0].backlog) if self.rows else []
        writer.writerow(list(SLOT_COLUMNS) + [f"aoi_k{k}_h{h}" for k, h in pairs]
                        + [f"backlog_uv{i}" for i in uvs])
        for r in self.rows:
            fixed = [_fmt(getattr(r, c)) for c in SLOT_COLUMNS]
            writer.writerow(fixed + [r.rsu_aoi[p] for p in pairs] + [_fmt(r.backlog[i]) for i in uvs])
        return buf.getvalue()

    def summary_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# aoicache summary.csv schema v{SCHEMA_VERSION}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["key", "value"])
        for key in SUMMARY_KEYS:
            writer.writerow([key, _fmt(self.counters[key])])
        return buf.getvalue()

    def events_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# aoicache events.csv schema v{SCHEMA_VERSION}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(EVENT_COLUMNS)
        for e in self.events:
            writer.writerow([_fmt(v) for v in asdict(e).values()])
        return buf.getvalue()

    def kind_stats_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# aoicache kind_stats.csv schema v{SCHEMA_VERSION}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["slot", "kind", "aoi_max", "avg", "min", "max"])
        for s in self.kind_stats:
            writer.writerow([s["slot"], s["kind"], s["aoi_max"], _fmt(s["avg"]), s["min"], s["max"]])
        return buf.getvalue()

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "slots.csv").write_text(self.slots_csv())
        (out / "summary.csv").write_text(self.summary_csv())
        (out / "events.csv").write_text(self.events_csv())
        (out / "kind_stats.csv").write_text(self.kind_stats_csv())


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def _kind_stats(slot: int, ledger: AoiLedger, layout: RoadLayout) -> list[dict]:
    out = []
    for cond in RoadCondition:
        vals = [a for (_, h), a in sorted(ledger.rsu.items()) if layout.regions[h].kind is cond]
        if not vals:
            continue
        amax = next(r.aoi_max for r in layout.regions if r.kind is cond)
        out.append({"slot": slot, "kind": cond.value, "aoi_max": amax,
                    "avg": float(np.mean(vals)), "min": min(vals), "max": max(vals)})
    return out


def initial_world(cfg: ScenarioConfig, rng: np.random.Generator) -> tuple[WorldState, RoadLayout]:
    layout = make_layout(cfg, rng)
    n_lanes = len(layout.lane_speeds)
    vehicles = []
    vid = 0
    for role, count in ((Role.UV, cfg.vehicles.n_uv), (Role.CV, cfg.vehicles.n_cv)):
        for i in range(count):
            lane = int(rng.integers(n_lanes))
            pos = float(rng.uniform(0.0, layout.total_length))
            ident = i if role is Role.CV else vid
            vehicles.append(VehicleState(ident, role, pos, lane, layout.lane_speeds[lane]))
            if role is Role.UV:
                vid += 1
    ledger = initial_ledger(layout, cfg.vehicles.n_cv, rng)
    pop = update_popularity(layout, (), 0, cfg.requests.popularity_window, cfg.stage1.popularity_floor)
    return WorldState(0, tuple(vehicles), ledger, {}, pop), layout


def _stage1(cfg, world, view, params, limits, rng) -> CachingAction:
    policy = cfg.stage1.policy
    if policy == "proposed":
        return myopic_caching_policy(world.ledger, view, params, limits,
                                     lookahead=cfg.stage1.lookahead,
                                     exhaustive_bound=cfg.stage1.exhaustive_bound)
    if policy == "aoi-greedy":
        return aoi_greedy_policy(world.ledger, view, limits)
    return random_policy(world.ledger, view, limits, rng, cfg.stage1.exhaustive_bound)


def run_scenario(cfg: ScenarioConfig) -> MetricsLog:
    """Run ``cfg.horizon`` slots of mobility, requests, caching and service.

    Randomness comes from independent streams spawned from ``cfg.seed`` for
    initialisation, requests and the random caching policy, and the request
    stream draws the same numbers every slot whatever the policies do, so
    runs that differ only in policy see the same world trace.
    """
    init_ss, req_ss, pol_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    init_rng = np.random.default_rng(init_ss)
    req_rng = np.random.default_rng(req_ss)
    pol_rng = np.random.default_rng(pol_ss)

    world, layout = initial_world(cfg, init_rng)
    s1 = cfg.stage1
    limits = ChannelLimits(s1.h_total, s1.h_cv, s1.h_rsu)
    params = UtilityParams(s1.epsilon, 1.0, s1.weight_mode, s1.popularity_floor)
    w = calibrate_w(world.ledger, caching_view(world, layout), params) if s1.w == "auto" else float(s1.w)
    params = replace(params, w=w)
    dpp = DppParams(resolve_v(cfg.stage2.V, layout), cfg.stage2.h_uv, cfg.stage2.enforce_staleness)
    amax = layout.aoi_max

    log = MetricsLog()
    log.meta.update(w=w, V=dpp.V, region_kinds=[r.kind.value for r in layout.regions])
    n_uv = cfg.vehicles.n_uv
    history: deque = deque()
    window = cfg.requests.popularity_window

    for _ in range(cfg.horizon):
        world, pass_events = step_world(world, layout)
        t = world.clock
        uv_by_id = {v.id: v for v in world.uvs()}
        uv_region = {i: region_at(layout, v.position) for i, v in uv_by_id.items()}
        queues, expired = {}, 0
        for i, q in world.queues.items():
            h = uv_region[i]
            if layout.rsu_of_region(h) != q.rsu_id or h > q.target_region:
                expired += 1
            else:
                queues[i] = q
        world = replace(world, queues=queues)
        draws, choices = req_rng.random(n_uv), req_rng.random(n_uv)
        new = generate_requests(world, layout, cfg.requests.rho, draws, choices)
        for q in new:
            queues[q.uv_id] = q
            history.append((t, q.rsu_id, q.target_region))
        while history and t - history[0][0] >= window:
            history.popleft()
        pop = update_popularity(layout, history, t, window, s1.popularity_floor)
        world = replace(world, queues=queues, popularity=pop)

        view = caching_view(world, layout)
        action = _stage1(cfg, world, view, params, limits, pol_rng)
        ledger, c_cost = transition(world.ledger, action, view, limits, pass_events, s1.popularity_floor)

        live = queues

        events, kept = [], {}
        s_cost = 0.0
        n_served = n_blocked = 0
        for k in range(layout.n_rsu):
            mine = [live[i] for i in sorted(live) if live[i].rsu_id == k]
            if not mine:
                continue
            dist = {q.uv_id: link_distance(layout.lane_point(uv_by_id[q.uv_id].position, uv_by_id[q.uv_id].lane),
                                           layout.rsu_positions[k]) for q in mine}
            content = {h: ledger.rsu[(k, h)] for h in layout.regions_of_rsu(k)}
            if cfg.stage2.policy == "dpp":
                decision = dpp_decide(mine, dist, content, dpp, amax)
            elif cfg.stage2.policy == "latency-only":
                decision = latency_only_policy(mine, dpp.h_uv_limit)
            else:
                decision = cost_only_policy(mine)
            blocked = set(decision.stale_blocked)
            for q in mine:
                a = decision.alpha.get(q.uv_id, 0)
                cost = service_cost(a, dist[q.uv_id])
                s_cost += cost
                n_served += a
                n_blocked += q.uv_id in blocked
                events.append(ServiceEvent(t, q.uv_id, k, q.target_region, a, q.backlog, cost,
                                           received_aoi(content[q.target_region], a), q.uv_id in blocked))
                nxt = queue_step(q, a, uv_region[q.uv_id])
                if nxt is not None:
                    kept[q.uv_id] = nxt

        world = replace(world, ledger=ledger, queues=kept)
        n_live = len(live)
        row = SlotRow(
            slot=t,
            uploads=len(action.uploads),
            updates=len(action.updates),
            caching_cost=c_cost,
            service_cost=s_cost,
            aoi_exceed=ledger.exceed_count(),
            live_requests=n_live,
            services=n_served,
            cost_save=n_live - n_served,
            stale_blocks=n_blocked,
            expired=expired,
            total_backlog=float(sum(q.backlog for q in live.values())),
            mean_rsu_aoi=float(np.mean(list(ledger.rsu.values()))),
            rsu_aoi=dict(ledger.rsu),
            backlog={i: (live[i].backlog if i in live else 0.0) for i in range(n_uv)},
        )
        log.add(row, events, len(new))
        if t % 10 == 0:
            log.kind_stats.extend(_kind_stats(t, ledger, layout))
    return log
