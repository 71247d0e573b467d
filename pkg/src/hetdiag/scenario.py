"""Network scenarios: two-tier layouts, cell parameters, misconfiguration injection.

A scenario describes one macrocell overlaid with a configurable number of
femtocells placed in clustered hotspot patches.  All randomness is derived
from the scenario seed, so the same configuration always produces the same
layout, bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from typing import Mapping

import numpy as np
import yaml

from .errors import PlacementError, ScenarioFormatError, ValidationError

SCENARIO_SCHEMA_VERSION = 1

# rng stream tags; keep stable or layouts change under the same seed
_TAG_LAYOUT = 11


class Tier(str, Enum):
    MACRO = "macro"
    FEMTO = "femto"


class LocationType(str, Enum):
    """Functional type of the area a cell covers."""

    TRANSPORTATION = "transportation"
    EDUCATION = "education"
    WORK = "work"
    ENTERTAINMENT = "entertainment"


LOCATION_TYPES = tuple(LocationType)


class MobilityClass(str, Enum):
    STATIONARY = "stationary"
    PEDESTRIAN = "pedestrian"
    VEHICLE = "vehicle"


MOBILITY_CLASSES = tuple(MobilityClass)


class ConfigClass(str, Enum):
    """Configuration state of a cell.

    The enum order is the declared tie-break order everywhere a prediction
    or vote ends in an exact tie (``NOMINAL`` wins first).
    """

    NOMINAL = "nominal"
    TX_TOO_STRONG = "tx_too_strong"
    TX_TOO_WEAK = "tx_too_weak"
    HO_MARGIN_TOO_LARGE = "ho_margin_too_large"
    HO_MARGIN_TOO_SMALL = "ho_margin_too_small"


CONFIG_CLASSES = tuple(ConfigClass)
CLASS_INDEX = {cls: i for i, cls in enumerate(CONFIG_CLASSES)}


def _check(cond: bool, name: str, message: str) -> None:
    if not cond:
        raise ValidationError(f"{name}: {message}")


def _check_mix(mix: Mapping, allowed, name: str) -> dict:
    out = {}
    for key, val in mix.items():
        key = allowed(key) if not isinstance(key, allowed) else key
        _check(0.0 <= float(val) <= 1.0, name, f"fraction {val!r} outside [0, 1]")
        out[key] = float(val)
    total = sum(out.values())
    _check(abs(total - 1.0) <= 1e-9, name, f"fractions sum to {total!r}, expected 1")
    # absent entries count as zero
    for member in allowed:
        out.setdefault(member, 0.0)
    return out


@dataclass(frozen=True)
class RadioParams:
    """Propagation constants shared by both tiers."""

    freq_mhz: float = 2000.0
    macro_height_m: float = 30.0
    ue_height_m: float = 1.5
    wall_loss_db: float = 10.0
    building_radius_m: float = 15.0
    shadowing_sigma_outdoor_db: float = 8.0
    shadowing_sigma_indoor_db: float = 4.0
    noise_floor_dbm: float = -104.0

    def __post_init__(self):
        _check(self.wall_loss_db >= 0, "radio.wall_loss_db", "must be >= 0")
        _check(self.building_radius_m > 0, "radio.building_radius_m", "must be > 0")


@dataclass(frozen=True)
class MobilityParams:
    """Mobility class mix and per-class speed ranges (m/s)."""

    mix: Mapping[MobilityClass, float] = field(
        default_factory=lambda: {
            MobilityClass.STATIONARY: 0.35,
            MobilityClass.PEDESTRIAN: 0.60,
            MobilityClass.VEHICLE: 0.05,
        }
    )
    pedestrian_speed_range: tuple[float, float] = (0.5, 2.5)
    vehicle_speed_range: tuple[float, float] = (8.0, 20.0)
    home_range_m: float = 200.0
    home_sigma_m: float = 25.0
    hotspot_home_fraction: float = 0.8

    def __post_init__(self):
        object.__setattr__(self, "mix", _check_mix(self.mix, MobilityClass, "mobility.mix"))
        lo, hi = self.pedestrian_speed_range
        _check(0 < lo <= hi, "mobility.pedestrian_speed_range", "invalid range")
        lo, hi = self.vehicle_speed_range
        _check(0 < lo <= hi, "mobility.vehicle_speed_range", "invalid range")
        _check(0 <= self.hotspot_home_fraction <= 1, "mobility.hotspot_home_fraction", "must be in [0, 1]")


@dataclass(frozen=True)
class RlfParams:
    """Radio-link-failure detection and attribution timers."""

    qout_db: float = -4.5
    t_rlf_ms: float = 1000.0
    t_store_ms: float = 5000.0
    settle_ms: float = 1000.0
    bler_sinr_threshold_db: float = -3.0

    def __post_init__(self):
        _check(self.t_rlf_ms > 0, "rlf.t_rlf_ms", "must be > 0")
        _check(self.t_store_ms >= 0, "rlf.t_store_ms", "must be >= 0")
        _check(self.settle_ms >= 0, "rlf.settle_ms", "must be >= 0")


@dataclass(frozen=True)
class TrafficParams:
    session_rate_per_s: float = 0.05
    vehicle_rate_multiplier: float = 3.0
    mean_session_s: float = 12.0
    admission_limit: int = 4
    byte_sigma_log: float = 1.0
    # per-area traffic volume scale; hotspot types differ in how heavy their use is
    location_byte_scale: Mapping[LocationType, float] = field(
        default_factory=lambda: {
            LocationType.TRANSPORTATION: 1.4,
            LocationType.EDUCATION: 1.0,
            LocationType.WORK: 0.6,
            LocationType.ENTERTAINMENT: 2.2,
        }
    )

    def __post_init__(self):
        _check(self.session_rate_per_s >= 0, "traffic.session_rate_per_s", "must be >= 0")
        _check(self.vehicle_rate_multiplier > 0, "traffic.vehicle_rate_multiplier", "must be > 0")
        _check(self.mean_session_s > 0, "traffic.mean_session_s", "must be > 0")
        _check(self.admission_limit >= 1, "traffic.admission_limit", "must be >= 1")
        scale = {LocationType(k): float(v) for k, v in self.location_byte_scale.items()}
        for t in LocationType:
            scale.setdefault(t, 1.0)
            _check(scale[t] > 0, "traffic.location_byte_scale", "scales must be > 0")
        object.__setattr__(self, "location_byte_scale", scale)


@dataclass(frozen=True)
class MisconfigOffsets:
    """Parameter deltas applied when a misconfiguration is injected.

    Transmit-power classes are offsets from the nominal femto power; the
    handover-margin classes are absolute replacement values in dB.
    """

    tx_strong_delta_db: float = 10.0
    tx_weak_delta_db: float = -13.0
    margin_large_db: float = 10.0
    margin_small_db: float = 0.0


@dataclass(frozen=True)
class ScenarioConfig:
    """Full description of one reproducible simulation scenario."""

    region_size: tuple[float, float] = (600.0, 600.0)
    femto_count: int = 50
    macro_tx_power: float = 43.0
    femto_tx_power_nominal: float = 13.0
    handover_margin_nominal: float = 3.0
    ttt_nominal: float = 160.0
    user_count: int = 150
    epoch_duration: float = 60.0
    epochs_per_run: int = 16
    rng_seed: int = 0
    location_type_mix: Mapping[LocationType, float] = field(
        default_factory=lambda: {t: 0.25 for t in LocationType}
    )
    femto_indoor_fraction: float = 0.8
    hotspot_size: int = 8
    hotspot_sigma_m: float = 40.0
    min_cell_separation_m: float = 10.0
    mobility: MobilityParams = field(default_factory=MobilityParams)
    radio: RadioParams = field(default_factory=RadioParams)
    rlf: RlfParams = field(default_factory=RlfParams)
    traffic: TrafficParams = field(default_factory=TrafficParams)
    misconfig: MisconfigOffsets = field(default_factory=MisconfigOffsets)

    def __post_init__(self):
        w, h = self.region_size
        object.__setattr__(self, "region_size", (float(w), float(h)))
        _check(w > 0 and h > 0, "region_size", "both dimensions must be > 0")
        _check(self.femto_count >= 0, "femto_count", "must be >= 0")
        _check(self.user_count >= 0, "user_count", "must be >= 0")
        _check(self.epoch_duration > 0, "epoch_duration", "must be > 0")
        _check(self.epochs_per_run >= 1, "epochs_per_run", "must be >= 1")
        _check(-10.0 <= self.macro_tx_power <= 46.0, "macro_tx_power", "outside [-10, 46] dBm")
        _check(-10.0 <= self.femto_tx_power_nominal <= 46.0, "femto_tx_power_nominal", "outside [-10, 46] dBm")
        _check(self.handover_margin_nominal >= 0, "handover_margin_nominal", "must be >= 0")
        _check(self.ttt_nominal > 0, "ttt_nominal", "must be > 0")
        _check(self.hotspot_size >= 1, "hotspot_size", "must be >= 1")
        _check(self.min_cell_separation_m > 0, "min_cell_separation_m", "must be > 0")
        _check(0 <= self.femto_indoor_fraction <= 1, "femto_indoor_fraction", "must be in [0, 1]")
        object.__setattr__(
            self,
            "location_type_mix",
            _check_mix(self.location_type_mix, LocationType, "location_type_mix"),
        )
        _check(isinstance(self.rng_seed, int) and 0 <= self.rng_seed < 2**64, "rng_seed", "must be a 64-bit integer")


@dataclass(frozen=True)
class Cell:
    """One base station with its current configuration."""

    id: int
    tier: Tier
    position: tuple[float, float]
    indoor: bool
    tx_power: float
    handover_margin: float
    ttt: float
    location_type: LocationType
    config_class: ConfigClass = ConfigClass.NOMINAL

    def __post_init__(self):
        _check(-10.0 <= self.tx_power <= 46.0, f"cell {self.id} tx_power", "outside [-10, 46] dBm")
        _check(self.handover_margin >= 0, f"cell {self.id} handover_margin", "must be >= 0")


@dataclass(frozen=True)
class NetworkLayout:
    """Immutable set of cells plus the scenario they were generated from."""

    cells: tuple[Cell, ...]
    config: ScenarioConfig

    def __post_init__(self):
        macros = [c for c in self.cells if c.tier is Tier.MACRO]
        _check(len(macros) == 1, "layout", f"expected exactly one macro cell, found {len(macros)}")
        w, h = self.config.region_size
        for c in self.cells:
            if c.tier is Tier.FEMTO:
                x, y = c.position
                _check(0 <= x <= w and 0 <= y <= h, f"cell {c.id}", "femto position outside region")
        object.__setattr__(self, "_index", {c.id: c for c in self.cells})

    @property
    def macro(self) -> Cell:
        return next(c for c in self.cells if c.tier is Tier.MACRO)

    @property
    def femtos(self) -> tuple[Cell, ...]:
        return tuple(c for c in self.cells if c.tier is Tier.FEMTO)

    def cell(self, cell_id: int) -> Cell:
        try:
            return self._index[cell_id]
        except KeyError:
            raise ValidationError(f"unknown cell id {cell_id}") from None

    def positions(self) -> np.ndarray:
        """Cell positions as an (n_cells, 2) array in layout order."""
        return np.array([c.position for c in self.cells], dtype=float)


def class_parameters(config: ScenarioConfig, cls: ConfigClass) -> tuple[float, float]:
    """Femto (tx_power_dbm, handover_margin_db) implied by a configuration class."""
    tx = config.femto_tx_power_nominal
    margin = config.handover_margin_nominal
    off = config.misconfig
    if cls is ConfigClass.TX_TOO_STRONG:
        tx += off.tx_strong_delta_db
    elif cls is ConfigClass.TX_TOO_WEAK:
        tx += off.tx_weak_delta_db
    elif cls is ConfigClass.HO_MARGIN_TOO_LARGE:
        margin = off.margin_large_db
    elif cls is ConfigClass.HO_MARGIN_TOO_SMALL:
        margin = off.margin_small_db
    return tx, margin


def generate_layout(config: ScenarioConfig) -> NetworkLayout:
    """Build a seeded two-tier layout: one central macro, clustered femtos.

    Femtocells are placed in hotspot patches (parent points with Gaussian
    offspring) so that cell deployment follows the region's traffic demand.
    Each patch is assigned one location type drawn from the configured mix,
    and its femtos inherit that type.

    Raises :class:`PlacementError` when the region cannot hold
    ``femto_count`` cells at the configured minimum separation.
    """
    w, h = config.region_size
    sep = config.min_cell_separation_m
    total = config.femto_count + 1
    if math.floor(w / sep) * math.floor(h / sep) < total:
        raise PlacementError(
            f"region {w} m x {h} m cannot hold {total} cells at minimum separation {sep} m"
        )

    rng = np.random.default_rng(np.random.SeedSequence([config.rng_seed, _TAG_LAYOUT]))
    macro = Cell(
        id=0,
        tier=Tier.MACRO,
        position=(w / 2.0, h / 2.0),
        indoor=False,
        tx_power=config.macro_tx_power,
        handover_margin=config.handover_margin_nominal,
        ttt=config.ttt_nominal,
        location_type=LocationType.TRANSPORTATION,
    )
    cells = [macro]
    if config.femto_count == 0:
        return NetworkLayout(cells=tuple(cells), config=config)

    n_hot = max(1, math.ceil(config.femto_count / config.hotspot_size))
    margin = min(config.hotspot_sigma_m, w / 4.0, h / 4.0)
    hot_x = rng.uniform(margin, w - margin, n_hot)
    hot_y = rng.uniform(margin, h - margin, n_hot)
    type_probs = [config.location_type_mix[t] for t in LOCATION_TYPES]
    hot_types = rng.choice(len(LOCATION_TYPES), size=n_hot, p=type_probs)

    placed = np.empty((total, 2), dtype=float)
    placed[0] = macro.position
    sep2 = sep * sep
    for i in range(config.femto_count):
        hot = i % n_hot
        pos = None
        for attempt in range(200):
            if attempt < 120:
                cand = np.array([hot_x[hot], hot_y[hot]]) + rng.normal(0.0, config.hotspot_sigma_m, 2)
            else:
                # crowded patch: fall back to uniform draws anywhere in the region
                cand = rng.uniform([1.0, 1.0], [w - 1.0, h - 1.0])
            cand = np.clip(cand, [1.0, 1.0], [w - 1.0, h - 1.0])
            d2 = np.sum((placed[: i + 1] - cand) ** 2, axis=1)
            if np.all(d2 >= sep2):
                pos = cand
                break
        if pos is None:
            raise PlacementError(
                f"could not place femto {i + 1}/{config.femto_count} at minimum separation {sep} m"
            )
        placed[i + 1] = pos
        cells.append(
            Cell(
                id=i + 1,
                tier=Tier.FEMTO,
                position=(float(pos[0]), float(pos[1])),
                indoor=bool(rng.random() < config.femto_indoor_fraction),
                tx_power=config.femto_tx_power_nominal,
                handover_margin=config.handover_margin_nominal,
                ttt=config.ttt_nominal,
                location_type=LOCATION_TYPES[hot_types[hot]],
            )
        )
    return NetworkLayout(cells=tuple(cells), config=config)


def inject_misconfiguration(layout: NetworkLayout, cell_id: int, cls: ConfigClass) -> NetworkLayout:
    """Return a layout identical except for one femto's configuration class.

    Injecting ``NOMINAL`` restores the nominal parameters, so
    ``inject(inject(L, c, anything), c, NOMINAL) == L``.
    """
    cell = layout.cell(cell_id)
    if cell.tier is Tier.MACRO:
        raise ValidationError(f"cell {cell_id} is the macro; only femtocells can be misconfigured")
    cls = ConfigClass(cls)
    tx, margin = class_parameters(layout.config, cls)
    new_cell = replace(cell, tx_power=tx, handover_margin=margin, config_class=cls)
    cells = tuple(new_cell if c.id == cell_id else c for c in layout.cells)
    return NetworkLayout(cells=cells, config=layout.config)


# ---------------------------------------------------------------------------
# layout CSV export

LAYOUT_CSV_HEADER = "id,tier,x_m,y_m,indoor,tx_dbm,margin_db,ttt_ms,location_type,config_class"


def layout_to_csv(layout: NetworkLayout) -> str:
    lines = [LAYOUT_CSV_HEADER]
    for c in layout.cells:
        lines.append(
            f"{c.id},{c.tier.value},{c.position[0]!r},{c.position[1]!r},"
            f"{str(c.indoor).lower()},{c.tx_power!r},{c.handover_margin!r},{c.ttt!r},"
            f"{c.location_type.value},{c.config_class.value}"
        )
    return "\n".join(lines) + "\n"


def write_layout_csv(layout: NetworkLayout, path) -> None:
    with open(path, "w") as fh:
        fh.write(layout_to_csv(layout))


# ---------------------------------------------------------------------------
# scenario file IO (nested key-value YAML, versioned)

def _params_to_dict(obj) -> dict:
    out = {}
    for f in fields(obj):
        val = getattr(obj, f.name)
        if isinstance(val, (RadioParams, MobilityParams, RlfParams, TrafficParams, MisconfigOffsets)):
            out[f.name] = _params_to_dict(val)
        elif isinstance(val, Mapping):
            out[f.name] = {k.value if isinstance(k, Enum) else k: v for k, v in val.items()}
        elif isinstance(val, tuple):
            out[f.name] = list(val)
        else:
            out[f.name] = val
    return out


def scenario_to_dict(config: ScenarioConfig) -> dict:
    data = _params_to_dict(config)
    return {"schema_version": SCENARIO_SCHEMA_VERSION, **data}


def save_scenario(config: ScenarioConfig, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(scenario_to_dict(config), fh, sort_keys=False)


_NESTED = {
    "mobility": MobilityParams,
    "radio": RadioParams,
    "rlf": RlfParams,
    "traffic": TrafficParams,
    "misconfig": MisconfigOffsets,
}


def _build_params(cls, data: Mapping, context: str):
    known = {f.name for f in fields(cls)}
    kwargs = {}
    for key, val in data.items():
        if key not in known:
            raise ValidationError(f"unknown key '{context}{key}' in scenario file")
        if isinstance(val, list):
            val = tuple(val)
        kwargs[key] = val
    return cls(**kwargs)


def scenario_from_dict(data: Mapping) -> ScenarioConfig:
    data = dict(data)
    version = data.pop("schema_version", SCENARIO_SCHEMA_VERSION)
    if version != SCENARIO_SCHEMA_VERSION:
        raise ValidationError(f"unsupported scenario schema_version {version!r}")
    known = {f.name for f in fields(ScenarioConfig)}
    kwargs = {}
    for key, val in data.items():
        if key not in known:
            raise ValidationError(f"unknown key '{key}' in scenario file")
        if key in _NESTED:
            if not isinstance(val, Mapping):
                raise ValidationError(f"'{key}' must be a mapping of parameters")
            kwargs[key] = _build_params(_NESTED[key], val, context=f"{key}.")
        elif isinstance(val, list):
            kwargs[key] = tuple(val)
        else:
            kwargs[key] = val
    return ScenarioConfig(**kwargs)


def load_scenario(path) -> ScenarioConfig:
    """Parse and validate a scenario file.

    Unknown keys are rejected; parse errors carry the offending line number.
    """
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            line = None
            mark = getattr(exc, "problem_mark", None)
            if mark is not None:
                line = mark.line + 1
            raise ScenarioFormatError(f"scenario parse error: {exc}", line=line) from exc
    if data is None:
        data = {}
    if not isinstance(data, Mapping):
        raise ScenarioFormatError("scenario file must contain a key-value mapping")
    return scenario_from_dict(data)
