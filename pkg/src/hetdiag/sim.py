"""Discrete-time network simulation: mobility, traffic, handovers, KPIs.

The module exposes two layers:

* single-entity operations (``step_mobility``, ``evaluate_handover``,
  ``classify_rlf``, ``generate_traffic``, ``aggregate_kpis``) that define the
  exact step semantics, and
* ``run_epoch``, which advances a whole user population over one epoch in
  100 ms steps and aggregates per-cell KPI feature vectors into labeled
  training instances.

Epoch simulation is deterministic given (layout, users, config, seed).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Optional

import numpy as np

from .errors import ContractViolation, ValidationError
from .scenario import (
    CONFIG_CLASSES,
    ConfigClass,
    LOCATION_TYPES,
    LocationType,
    MobilityClass,
    NetworkLayout,
    ScenarioConfig,
    Tier,
    TrafficParams,
)

DT_MS = 100.0
DT_S = DT_MS / 1000.0

EVENT_LOG_SCHEMA_VERSION = 1

_TAG_USERS = 31

# The 13 application categories used to bucket session traffic.
APP_CATEGORIES = (
    "web", "p2p", "im", "reading", "social", "video", "music",
    "app_market", "game", "email", "stock", "shopping", "map",
)
CATEGORY_INDEX = {c: i for i, c in enumerate(APP_CATEGORIES)}

# Session-count weights per location type (rows sum to 1).  Encodes the
# qualitative profile differences between area types: music and P2P lead in
# work areas, P2P is elevated around education, map dominates transportation,
# video and social dominate entertainment areas.
TRAFFIC_MIX = {
    LocationType.WORK: np.array(
        [0.13, 0.14, 0.10, 0.06, 0.08, 0.05, 0.18, 0.02, 0.03, 0.10, 0.06, 0.03, 0.02]
    ),
    LocationType.EDUCATION: np.array(
        [0.13, 0.15, 0.10, 0.07, 0.10, 0.11, 0.10, 0.05, 0.08, 0.04, 0.01, 0.03, 0.03]
    ),
    LocationType.TRANSPORTATION: np.array(
        [0.11, 0.04, 0.12, 0.08, 0.13, 0.09, 0.09, 0.02, 0.06, 0.04, 0.02, 0.04, 0.20]
    ),
    LocationType.ENTERTAINMENT: np.array(
        [0.10, 0.03, 0.09, 0.04, 0.16, 0.20, 0.08, 0.05, 0.08, 0.03, 0.03, 0.10, 0.04]
    ),
}

# Median session volume (bytes) per category; sessions draw log-normal sizes.
BYTE_MEDIANS = np.array(
    [2e5, 3e6, 2e4, 1e5, 3e5, 2e6, 8e5, 1e6, 1.5e5, 5e4, 3e4, 2.5e5, 8e4]
)

FEATURE_NAMES = (
    "dcr",
    "bcr",
    "bler_proxy",
    "handover_attempts",
    "ho_too_late_count",
    "ho_too_early_count",
    "ho_wrong_cell_count",
    "mean_rssi_dbm",
    "mean_sinr_db",
    "traffic_bytes",
    "active_users",
    "mean_user_rog_m",
    "handover_rate_per_user",
)
N_FEATURES = len(FEATURE_NAMES)


class HandoverOutcome(str, Enum):
    SUCCESS = "success"
    RLF_TOO_LATE = "rlf_too_late"
    RLF_TOO_EARLY = "rlf_too_early"
    RLF_WRONG_CELL = "rlf_wrong_cell"
    BLOCKED = "blocked"


@dataclass(frozen=True)
class HandoverEvent:
    user_id: int
    time_s: float
    source_cell: int
    target_cell: int
    outcome: HandoverOutcome

    def __post_init__(self):
        if self.outcome in (HandoverOutcome.SUCCESS, HandoverOutcome.RLF_WRONG_CELL):
            if self.source_cell == self.target_cell:
                raise ValidationError(f"{self.outcome.value} handover with source == target")


@dataclass(frozen=True)
class TrafficRecord:
    user_id: int
    time_s: float
    app_category: str
    bytes: float
    cell_id: int

    def __post_init__(self):
        if self.app_category not in CATEGORY_INDEX:
            raise ValidationError(f"unknown app category {self.app_category!r}")
        if self.bytes <= 0:
            raise ValidationError("traffic record bytes must be > 0")


@dataclass(frozen=True)
class SessionEvent:
    """Lifecycle record for one session: admitted, blocked, completed or dropped."""

    user_id: int
    time_s: float
    cell_id: int
    category: str
    bytes: float
    outcome: str  # admitted | blocked | completed | dropped


@dataclass(frozen=True)
class LinkSample:
    """One per-step serving-link measurement used for radio KPI means."""

    user_id: int
    time_s: float
    cell_id: int
    rssi_dbm: float
    sinr_db: float


@dataclass(frozen=True)
class PositionSample:
    user_id: int
    time_s: float
    x_m: float
    y_m: float
    cell_id: int


@dataclass(frozen=True)
class FeatureVector:
    """Fixed-order per (cell, epoch) KPI vector.

    ``handover_attempts`` counts every handover event attributed to the cell
    (executions, blocked tries, and too-late failures); the three failure
    counters classify the failed subset.  Ratios use the 0/0 -> 0 convention.
    """

    dcr: float = 0.0
    bcr: float = 0.0
    bler_proxy: float = 0.0
    handover_attempts: float = 0.0
    ho_too_late_count: float = 0.0
    ho_too_early_count: float = 0.0
    ho_wrong_cell_count: float = 0.0
    mean_rssi_dbm: float = 0.0
    mean_sinr_db: float = 0.0
    traffic_bytes: float = 0.0
    active_users: float = 0.0
    mean_user_rog_m: float = 0.0
    handover_rate_per_user: float = 0.0

    def __post_init__(self):
        for name in ("dcr", "bcr", "bler_proxy"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name} = {v!r} outside [0, 1]")
        for name in (
            "handover_attempts", "ho_too_late_count", "ho_too_early_count",
            "ho_wrong_cell_count", "traffic_bytes", "active_users",
        ):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in FEATURE_NAMES], dtype=float)

    @classmethod
    def from_array(cls, values) -> "FeatureVector":
        values = np.asarray(values, dtype=float)
        if values.shape != (N_FEATURES,):
            raise ValidationError(f"feature vector must have {N_FEATURES} dimensions")
        return cls(**{name: float(v) for name, v in zip(FEATURE_NAMES, values)})


@dataclass(frozen=True)
class Instance:
    """One (features, configuration label) training record for a cell-epoch."""

    cell_id: int
    epoch_id: int
    features: FeatureVector
    label: ConfigClass


@dataclass
class UserEquipment:
    id: int
    position: np.ndarray
    mobility_class: MobilityClass
    speed: float
    waypoint: np.ndarray
    home: np.ndarray
    region: tuple[float, float]
    serving_cell: int = 0
    ttt_timer_ms: float = 0.0
    rlf_timer_ms: float = 0.0
    recent_handover: Optional[tuple[float, int]] = None  # (time_s, source cell)
    trajectory: list = field(default_factory=list)  # (time_s, cell_id, (x, y))
    traffic_profile: np.ndarray = field(default_factory=lambda: np.ones(len(APP_CATEGORIES)))


# ---------------------------------------------------------------------------
# user population


def draw_user_arrays(layout: NetworkLayout, config: ScenarioConfig, seed: int, epoch_id: int) -> dict:
    """Seeded per-epoch population draw as plain arrays.

    Stationary and pedestrian users are preferentially homed near femtocells
    (deployment follows demand), vehicles start anywhere in the region.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), _TAG_USERS, int(epoch_id)]))
    n = config.user_count
    w, h = config.region_size
    mob = config.mobility
    probs = [mob.mix[c] for c in MobilityClass]
    classes = rng.choice(len(probs), size=n, p=probs)
    is_ped = classes == 1
    is_veh = classes == 2

    speed = np.zeros(n)
    speed[is_ped] = rng.uniform(*mob.pedestrian_speed_range, is_ped.sum())
    speed[is_veh] = rng.uniform(*mob.vehicle_speed_range, is_veh.sum())

    femto_pos = np.array([c.position for c in layout.femtos], dtype=float)
    home = np.empty((n, 2))
    near_hotspot = rng.random(n) < (mob.hotspot_home_fraction if len(femto_pos) else 0.0)
    anchor = rng.integers(0, max(len(femto_pos), 1), size=n)
    home[near_hotspot] = femto_pos[anchor[near_hotspot]] + rng.normal(
        0.0, mob.home_sigma_m, (int(near_hotspot.sum()), 2)
    )
    home[~near_hotspot] = rng.uniform([0, 0], [w, h], (int((~near_hotspot).sum()), 2))
    home = np.clip(home, [0.0, 0.0], [w, h])

    pos = home.copy()
    pos[is_veh] = rng.uniform([0, 0], [w, h], (int(is_veh.sum()), 2))

    waypoint = pos.copy()
    waypoint[is_ped] = _pedestrian_waypoints(rng, home[is_ped], mob.home_range_m, (w, h))
    waypoint[is_veh] = rng.uniform([0, 0], [w, h], (int(is_veh.sum()), 2))
    return {
        "classes": classes,
        "speed": speed,
        "home": home,
        "position": pos,
        "waypoint": waypoint,
    }


def _pedestrian_waypoints(rng, homes: np.ndarray, home_range: float, region) -> np.ndarray:
    """Uniform draws in each pedestrian's home disc, clipped to the region."""
    k = len(homes)
    r = home_range * np.sqrt(rng.random(k))
    theta = rng.uniform(0.0, 2.0 * np.pi, k)
    wp = homes + np.column_stack([r * np.cos(theta), r * np.sin(theta)])
    return np.clip(wp, [0.0, 0.0], list(region))


def make_users(layout: NetworkLayout, config: ScenarioConfig, seed: int, epoch_id: int = 0) -> list[UserEquipment]:
    """Instantiate the seeded per-epoch population as UserEquipment objects."""
    arrays = draw_user_arrays(layout, config, seed, epoch_id)
    users = []
    for i in range(config.user_count):
        users.append(
            UserEquipment(
                id=i,
                position=arrays["position"][i].copy(),
                mobility_class=tuple(MobilityClass)[arrays["classes"][i]],
                speed=float(arrays["speed"][i]),
                waypoint=arrays["waypoint"][i].copy(),
                home=arrays["home"][i].copy(),
                region=config.region_size,
            )
        )
    return users


# ---------------------------------------------------------------------------
# single-entity operations


def step_mobility(ue: UserEquipment, dt_s: float, rng: np.random.Generator,
                  home_range_m: float = 200.0) -> UserEquipment:
    """Advance one user by dt along its waypoint path (random-waypoint model).

    Stationary users never move.  Pedestrians draw new waypoints inside a
    home disc of radius ``home_range_m``; vehicles draw them region-wide.
    Returns the same object, updated in place.
    """
    if dt_s <= 0:
        raise ValidationError("dt_s must be > 0")
    if ue.mobility_class is MobilityClass.STATIONARY or ue.speed <= 0:
        return ue
    delta = ue.waypoint - ue.position
    dist = float(np.hypot(delta[0], delta[1]))
    step_len = ue.speed * dt_s
    if dist <= step_len:
        ue.position = ue.waypoint.copy()
        if ue.mobility_class is MobilityClass.PEDESTRIAN:
            ue.waypoint = _pedestrian_waypoints(
                rng, ue.home[None, :], home_range_m, ue.region
            )[0]
        else:
            ue.waypoint = rng.uniform([0.0, 0.0], list(ue.region))
    else:
        ue.position = ue.position + delta * (step_len / dist)
    return ue


def evaluate_handover(
    ue: UserEquipment,
    measurements: Mapping[int, float],
    margin_db: float,
    ttt_ms: float,
    dt_ms: float,
    *,
    time_s: float = 0.0,
    settle_ms: float = 0.0,
) -> tuple[UserEquipment, Optional[HandoverEvent]]:
    """One time-to-trigger bookkeeping step for a single user.

    The trigger condition is ``best_neighbor_rx > serving_rx + margin``
    (strict, so equal powers never accumulate).  While the condition holds
    the timer grows by ``dt_ms``, otherwise it resets; once it reaches
    ``ttt_ms`` the user hands over to the currently strongest neighbor.
    Within ``settle_ms`` of a previous handover the condition is suppressed,
    modeling the post-handover reconfiguration gap.
    """
    if ue.serving_cell not in measurements:
        raise ContractViolation(f"serving cell {ue.serving_cell} missing from measurements")
    serving_rx = measurements[ue.serving_cell]
    neighbors = [(cid, rx) for cid, rx in measurements.items() if cid != ue.serving_cell]
    if not neighbors:
        ue.ttt_timer_ms = 0.0
        return ue, None
    best_cell, best_rx = max(neighbors, key=lambda kv: (kv[1], -kv[0]))

    in_settle = (
        ue.recent_handover is not None
        and (time_s - ue.recent_handover[0]) * 1000.0 < settle_ms
    )
    if best_rx > serving_rx + margin_db and not in_settle:
        ue.ttt_timer_ms += dt_ms
    else:
        ue.ttt_timer_ms = 0.0
        return ue, None

    if ue.ttt_timer_ms >= ttt_ms:
        event = HandoverEvent(
            user_id=ue.id,
            time_s=time_s,
            source_cell=ue.serving_cell,
            target_cell=best_cell,
            outcome=HandoverOutcome.SUCCESS,
        )
        ue.recent_handover = (time_s, ue.serving_cell)
        ue.serving_cell = best_cell
        ue.ttt_timer_ms = 0.0
        ue.rlf_timer_ms = 0.0
        return ue, event
    return ue, None


def classify_rlf(
    ue: UserEquipment,
    event_time_s: float,
    reconnect_cell: int,
    t_store_s: float = 5.0,
) -> HandoverOutcome:
    """Classify a radio link failure into the three mobility failure types.

    * a handover completed within ``t_store_s`` and the user reconnects to
      its source: the handover fired too early;
    * a recent handover but reconnection to some third cell: handover went
      to the wrong cell;
    * everything else (typically no recent handover at all): the serving
      cell held the user too long, the handover fired too late.
    """
    rh = ue.recent_handover
    recent = rh is not None and 0.0 <= (event_time_s - rh[0]) <= t_store_s
    if recent and reconnect_cell == rh[1]:
        return HandoverOutcome.RLF_TOO_EARLY
    if recent and reconnect_cell not in (rh[1], ue.serving_cell):
        return HandoverOutcome.RLF_WRONG_CELL
    return HandoverOutcome.RLF_TOO_LATE


def generate_traffic(
    ue: UserEquipment,
    location_type: LocationType,
    dt_s: float,
    rng: np.random.Generator,
    params: TrafficParams = TrafficParams(),
    time_s: float = 0.0,
) -> list[TrafficRecord]:
    """Draw Poisson session arrivals for one user over a dt window.

    The category mix is conditioned on the serving cell's location type
    (weighted by the user's own category propensities); vehicle users carry
    an arrival-rate multiplier since on-the-move usage is cellular-bound.
    """
    if dt_s <= 0:
        raise ValidationError("dt_s must be > 0")
    rate = params.session_rate_per_s
    if ue.mobility_class is MobilityClass.VEHICLE:
        rate *= params.vehicle_rate_multiplier
    count = int(rng.poisson(rate * dt_s))
    if count == 0:
        return []
    location_type = LocationType(location_type)
    weights = TRAFFIC_MIX[location_type] * ue.traffic_profile
    weights = weights / weights.sum()
    byte_scale = params.location_byte_scale[location_type]
    records = []
    for _ in range(count):
        cat = int(rng.choice(len(APP_CATEGORIES), p=weights))
        nbytes = float(
            BYTE_MEDIANS[cat] * byte_scale * math.exp(params.byte_sigma_log * rng.standard_normal())
        )
        records.append(
            TrafficRecord(
                user_id=ue.id,
                time_s=time_s,
                app_category=APP_CATEGORIES[cat],
                bytes=nbytes,
                cell_id=ue.serving_cell,
            )
        )
    return records


def aggregate_kpis(cell_id: int, epoch_id: int, events: Iterable,
                   bler_threshold_db: float = -3.0) -> FeatureVector:
    """Fold an epoch's per-cell records into the 13-dimension KPI vector.

    ``events`` may mix :class:`HandoverEvent`, :class:`SessionEvent`,
    :class:`LinkSample` and :class:`PositionSample` records.  All handover,
    session and link records must be tagged with this cell; position samples
    provide user movement context for the gyration-radius feature.
    """
    counters = _KpiCounters()
    counters.bler_threshold_db = bler_threshold_db
    positions_by_user: dict[int, list] = {}
    for ev in events:
        if isinstance(ev, HandoverEvent):
            if ev.source_cell != cell_id:
                raise ContractViolation(
                    f"handover event for cell {ev.source_cell} passed to cell {cell_id}"
                )
            counters.add_handover(ev.outcome, ev.user_id)
        elif isinstance(ev, SessionEvent):
            if ev.cell_id != cell_id:
                raise ContractViolation(
                    f"session event for cell {ev.cell_id} passed to cell {cell_id}"
                )
            counters.add_session(ev.outcome, ev.bytes, ev.user_id)
        elif isinstance(ev, LinkSample):
            if ev.cell_id != cell_id:
                raise ContractViolation(
                    f"link sample for cell {ev.cell_id} passed to cell {cell_id}"
                )
            counters.add_sample(ev.rssi_dbm, ev.sinr_db, ev.user_id)
        elif isinstance(ev, PositionSample):
            positions_by_user.setdefault(ev.user_id, []).append((ev.x_m, ev.y_m))
        else:
            raise ContractViolation(f"unsupported event type {type(ev).__name__}")
    rogs = []
    for user in sorted(counters.active):
        pts = positions_by_user.get(user)
        if pts:
            pts = np.asarray(pts, dtype=float)
            center = pts.mean(axis=0)
            rogs.append(float(np.sqrt(np.mean(np.sum((pts - center) ** 2, axis=1)))))
    return counters.to_vector(mean_rog=float(np.mean(rogs)) if rogs else 0.0)


class _KpiCounters:
    """Shared KPI assembly used by both the event path and the array engine."""

    def __init__(self):
        self.admitted = 0
        self.blocked = 0
        self.dropped = 0
        self.bytes = 0.0
        self.attempts = 0
        self.late = 0
        self.early = 0
        self.wrong = 0
        self.rssi_sum = 0.0
        self.sinr_sum = 0.0
        self.n_samples = 0
        self.bad_samples = 0
        self.active: set[int] = set()
        self.bler_threshold_db = -3.0

    def add_handover(self, outcome: HandoverOutcome, user_id: int):
        self.attempts += 1
        if outcome is HandoverOutcome.RLF_TOO_LATE:
            self.late += 1
        elif outcome is HandoverOutcome.RLF_TOO_EARLY:
            self.early += 1
        elif outcome is HandoverOutcome.RLF_WRONG_CELL:
            self.wrong += 1
        self.active.add(user_id)

    def add_session(self, outcome: str, nbytes: float, user_id: int):
        if outcome == "admitted":
            self.admitted += 1
            self.bytes += nbytes
        elif outcome == "blocked":
            self.blocked += 1
        elif outcome == "dropped":
            self.dropped += 1
        elif outcome != "completed":
            raise ContractViolation(f"unknown session outcome {outcome!r}")
        self.active.add(user_id)

    def add_sample(self, rssi: float, sinr: float, user_id: int):
        self.n_samples += 1
        self.rssi_sum += rssi
        self.sinr_sum += sinr
        if sinr < self.bler_threshold_db:
            self.bad_samples += 1
        self.active.add(user_id)

    def to_vector(self, mean_rog: float = 0.0) -> FeatureVector:
        def ratio(num, den):
            return num / den if den else 0.0

        n_active = len(self.active)
        return FeatureVector(
            dcr=ratio(self.dropped, self.admitted),
            bcr=ratio(self.blocked, self.admitted + self.blocked),
            bler_proxy=ratio(self.bad_samples, self.n_samples),
            handover_attempts=float(self.attempts),
            ho_too_late_count=float(self.late),
            ho_too_early_count=float(self.early),
            ho_wrong_cell_count=float(self.wrong),
            mean_rssi_dbm=ratio(self.rssi_sum, self.n_samples),
            mean_sinr_db=ratio(self.sinr_sum, self.n_samples),
            traffic_bytes=self.bytes,
            active_users=float(n_active),
            mean_user_rog_m=mean_rog,
            handover_rate_per_user=ratio(float(self.attempts), n_active),
        )


# ---------------------------------------------------------------------------
# epoch log and epoch runner


@dataclass
class EpochLog:
    """Raw record streams and per-cell/per-user aggregates for one epoch."""

    epoch_id: int
    handover_events: list[HandoverEvent]
    session_events: list[SessionEvent]
    position_samples: list[PositionSample]
    per_cell_features: dict[int, FeatureVector]
    user_handover_counts: dict[int, int]
    user_traffic_bytes: dict[int, float]
    user_distance_m: dict[int, float]
    user_rog_m: dict[int, float]
    category_location_counts: np.ndarray  # (13 categories, 4 location types)

    @property
    def traffic_records(self) -> list[TrafficRecord]:
        return [
            TrafficRecord(e.user_id, e.time_s, e.category, e.bytes, e.cell_id)
            for e in self.session_events
            if e.outcome == "admitted"
        ]


def run_epoch(
    layout: NetworkLayout,
    users: list[UserEquipment],
    config: ScenarioConfig,
    epoch_id: int,
    rng,
    collect_events: bool = True,
    position_sample_every: int = 10,
) -> tuple[list[Instance], EpochLog]:
    """Simulate one epoch and emit one labeled instance per femtocell.

    ``rng`` may be an integer seed or a numpy Generator (a seed is then drawn
    from it).  Instance labels equal each cell's configuration class as set
    in the layout.
    """
    from . import _engine

    if isinstance(rng, np.random.Generator):
        seed = int(rng.integers(2**63))
    else:
        seed = int(rng)
    result = _engine.simulate_run(
        layout,
        config,
        assignment=None,
        seed=seed,
        users=users,
        epoch_ids=[epoch_id],
        collect_events=collect_events,
        position_sample_every=position_sample_every,
    )
    cell_ids = [c.id for c in layout.cells]
    femto_idx = [i for i, c in enumerate(layout.cells) if c.tier is Tier.FEMTO]
    instances = []
    for i in femto_idx:
        instances.append(
            Instance(
                cell_id=cell_ids[i],
                epoch_id=epoch_id,
                features=FeatureVector.from_array(result.features[i, 0]),
                label=CONFIG_CLASSES[result.labels[i, 0]],
            )
        )
    per_cell = {
        cell_ids[i]: FeatureVector.from_array(result.features[i, 0])
        for i in range(len(layout.cells))
    }
    log = EpochLog(
        epoch_id=epoch_id,
        handover_events=result.handover_events or [],
        session_events=result.session_events or [],
        position_samples=result.position_samples or [],
        per_cell_features=per_cell,
        user_handover_counts={u: int(v) for u, v in enumerate(result.user_ho_counts[0])},
        user_traffic_bytes={u: float(v) for u, v in enumerate(result.user_bytes[0])},
        user_distance_m={u: float(v) for u, v in enumerate(result.user_distance[0])},
        user_rog_m={u: float(v) for u, v in enumerate(result.user_rog[0])},
        category_location_counts=result.cat_loc_counts,
    )
    return instances, log


# ---------------------------------------------------------------------------
# export formats


def write_event_log(log: EpochLog, path) -> None:
    """Write the epoch's events as line-delimited JSON with a schema header."""
    with open(path, "w") as fh:
        fh.write(json.dumps({
            "record": "header",
            "schema_version": EVENT_LOG_SCHEMA_VERSION,
            "epoch_id": log.epoch_id,
        }) + "\n")
        for ev in log.handover_events:
            fh.write(json.dumps({
                "record": "handover", "time_s": ev.time_s, "user_id": ev.user_id,
                "source_cell": ev.source_cell, "target_cell": ev.target_cell,
                "outcome": ev.outcome.value,
            }) + "\n")
        for ev in log.session_events:
            fh.write(json.dumps({
                "record": "session", "time_s": ev.time_s, "user_id": ev.user_id,
                "cell_id": ev.cell_id, "category": ev.category, "bytes": ev.bytes,
                "outcome": ev.outcome,
            }) + "\n")
        for ev in log.position_samples:
            fh.write(json.dumps({
                "record": "position", "time_s": ev.time_s, "user_id": ev.user_id,
                "x_m": ev.x_m, "y_m": ev.y_m, "cell_id": ev.cell_id,
            }) + "\n")


INSTANCES_CSV_HEADER = "cell_id,epoch_id," + ",".join(FEATURE_NAMES) + ",label"


def write_instances_csv(instances: Iterable[Instance], path) -> None:
    with open(path, "w") as fh:
        fh.write(INSTANCES_CSV_HEADER + "\n")
        for inst in instances:
            feats = ",".join(repr(v) for v in inst.features.as_array())
            fh.write(f"{inst.cell_id},{inst.epoch_id},{feats},{inst.label.value}\n")


def read_instances_csv(path) -> list[Instance]:
    instances = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != INSTANCES_CSV_HEADER:
            raise ValidationError("unexpected instances CSV header; feature order is fixed")
        for line in fh:
            parts = line.strip().split(",")
            if len(parts) != N_FEATURES + 3:
                raise ValidationError(f"malformed instances CSV row: {line!r}")
            instances.append(
                Instance(
                    cell_id=int(parts[0]),
                    epoch_id=int(parts[1]),
                    features=FeatureVector.from_array([float(x) for x in parts[2:-1]]),
                    label=ConfigClass(parts[-1]),
                )
            )
    return instances
