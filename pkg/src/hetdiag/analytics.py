"""Trace analytics: mobility extent, visited cells, traffic/location profiles.

These functions operate on trajectories and traffic records, either built
in-process or loaded back from the simulator's exported event logs.  All
coordinates are planar meters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from .errors import ValidationError
from .scenario import LOCATION_TYPES, LocationType, NetworkLayout


@dataclass(frozen=True)
class Trajectory:
    """Ordered (time, position, serving cell) samples for one user."""

    times: np.ndarray
    positions: np.ndarray
    cells: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        positions = np.asarray(self.positions, dtype=float)
        cells = np.asarray(self.cells)
        if times.size < 1:
            raise ValidationError("trajectory must contain at least one sample")
        if positions.shape != (times.size, 2):
            raise ValidationError("positions must be an (n, 2) array matching times")
        if cells.shape != (times.size,):
            raise ValidationError("cells must be an (n,) array matching times")
        if times.size > 1 and not np.all(np.diff(times) > 0):
            raise ValidationError("trajectory times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "cells", cells)

    def __len__(self) -> int:
        return int(self.times.size)


def radius_of_gyration(traj: Trajectory) -> float:
    """Root-mean-square distance of trajectory points from their centroid."""
    pos = traj.positions
    center = pos.mean(axis=0)
    return float(np.sqrt(np.mean(np.sum((pos - center) ** 2, axis=1))))


def visited_cells(traj: Trajectory) -> int:
    """Number of distinct cells appearing in the trajectory."""
    return int(np.unique(traj.cells).size)


def cell_anchored(traj: Trajectory, layout: NetworkLayout) -> Trajectory:
    """Trajectory with each sample's position replaced by its serving cell's position.

    Lets the gyration radius be computed over cell sites instead of raw user
    positions; both variants are exposed because either convention is defensible.
    """
    positions = np.array([layout.cell(int(c)).position for c in traj.cells], dtype=float)
    return Trajectory(times=traj.times, positions=positions, cells=traj.cells)


def traffic_by_category_and_location(records: Iterable, layout: NetworkLayout) -> dict:
    """Mean per-cell traffic volume for every (app category, location type) pair.

    For each category, totals are accumulated per cell and then averaged over
    the cells of each location type (cells with no traffic in a category count
    as zero).  Keys are (category, LocationType); iteration order is category
    first, then the declared location-type order.
    """
    cells_by_type: dict[LocationType, list[int]] = {t: [] for t in LOCATION_TYPES}
    for cell in layout.cells:
        cells_by_type[cell.location_type].append(cell.id)

    per_cell: dict[tuple[str, int], float] = {}
    categories: list[str] = []
    for rec in records:
        cell_id = int(rec["cell_id"] if isinstance(rec, Mapping) else rec.cell_id)
        category = str(rec["category"] if isinstance(rec, Mapping) else rec.app_category)
        nbytes = float(rec["bytes"] if isinstance(rec, Mapping) else rec.bytes)
        layout.cell(cell_id)  # raises for unknown ids, naming the record's cell
        if category not in categories:
            categories.append(category)
        per_cell[category, cell_id] = per_cell.get((category, cell_id), 0.0) + nbytes

    table: dict[tuple[str, LocationType], float] = {}
    for category in sorted(categories):
        for loc in LOCATION_TYPES:
            ids = cells_by_type[loc]
            if not ids:
                continue
            table[category, loc] = float(np.mean([per_cell.get((category, i), 0.0) for i in ids]))
    return table


def write_group_means_csv(table: Mapping, path) -> None:
    with open(path, "w") as fh:
        fh.write("category,location_type,mean_bytes\n")
        for (category, loc), value in table.items():
            fh.write(f"{category},{loc.value},{value!r}\n")


def handover_traffic_correlation(pairs: Sequence[tuple[float, float]]) -> float:
    """Spearman rank correlation between per-user handover counts and traffic bytes."""
    pairs = np.asarray(pairs, dtype=float)
    if pairs.ndim != 2 or pairs.shape[0] < 2:
        raise ValidationError("need at least 2 (handover_count, bytes) pairs")
    x, y = pairs[:, 0], pairs[:, 1]
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise ValidationError("correlation undefined: zero variance in one variable")
    rho = stats.spearmanr(x, y).statistic
    return float(rho)


# ---------------------------------------------------------------------------
# event-log ingestion (the simulator's line-delimited export)

def load_event_log(path) -> list[dict]:
    """Read a line-delimited event log, checking its schema header."""
    records = []
    with open(path) as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if i == 0:
                if rec.get("record") != "header":
                    raise ValidationError("event log missing header record")
                if rec.get("schema_version") != 1:
                    raise ValidationError(f"unsupported event log schema_version {rec.get('schema_version')!r}")
                continue
            records.append(rec)
    return records


def traffic_records_from_log(records: Iterable[Mapping]) -> list[dict]:
    return [r for r in records if r.get("record") == "session" and r.get("outcome") == "admitted"]


def trajectories_from_log(records: Iterable[Mapping]) -> dict[int, Trajectory]:
    """Rebuild per-user trajectories from the log's position records."""
    by_user: dict[int, list] = {}
    for rec in records:
        if rec.get("record") != "position":
            continue
        by_user.setdefault(int(rec["user_id"]), []).append(
            (float(rec["time_s"]), float(rec["x_m"]), float(rec["y_m"]), int(rec["cell_id"]))
        )
    out = {}
    for user, rows in by_user.items():
        rows.sort(key=lambda r: r[0])
        arr = np.asarray(rows, dtype=float)
        out[user] = Trajectory(times=arr[:, 0], positions=arr[:, 1:3], cells=arr[:, 3].astype(int))
    return out


def handover_counts_from_log(records: Iterable[Mapping]) -> dict[int, int]:
    counts: dict[int, int] = {}
    for rec in records:
        if rec.get("record") == "handover":
            counts[int(rec["user_id"])] = counts.get(int(rec["user_id"]), 0) + 1
    return counts
