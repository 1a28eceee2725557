"""Scan records, CSV/JSON ingestion, experiment assembly and a log-distance
path-loss simulator used in place of a surveyed dataset."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

RSSI_FLOOR = -100.0
RSSI_CEIL = 0.0

LONG_COLUMNS = ("scan_id", "building", "floor", "x", "y", "bssid", "rssi")
REQUIRED_COLUMNS = ("scan_id", "x", "y", "bssid", "rssi")


class SchemaError(ValueError):
    pass


class StratificationError(ValueError):
    pass


@dataclass
class Scan:
    detections: list[tuple[str, float]]
    position: tuple[float, float]
    floor: int | None = None
    building: str | None = None
    timestamp: float | None = None
    scan_id: str = ""

    @property
    def n(self) -> int:
        return len(self.detections)

    def tag(self, field_name: str):
        if field_name == "building":
            return self.building
        if field_name == "floor":
            return self.floor
        if field_name in ("none", None):
            return None
        raise ValueError(f"unknown tag field {field_name!r}")


def canonical_bssid(bssid: str) -> str:
    return bssid.strip().lower()


# ---------------------------------------------------------------- file formats

@dataclass
class LoadReport:
    rows: int = 0
    scans: int = 0
    quarantined_rows: int = 0
    quarantined_scans: int = 0
    reasons: dict[str, int] = field(default_factory=dict)

    def quarantine(self, reason: str) -> None:
        self.quarantined_rows += 1
        self.reasons[reason] = self.reasons.get(reason, 0) + 1


def _opt_int(text: str) -> int | None:
    text = text.strip()
    return int(float(text)) if text else None


def load_scans(path, tag_map=None, *, with_report: bool = False):
    """Read long-format scan CSV (one detection per row).

    Rows with unparsable numbers or RSSI outside [-100, 0] dBm are quarantined
    and counted in the report. A scan left with no valid detection is
    quarantined as a whole. When ``tag_map`` is given, building/floor tags not
    listed in it are quarantined too.
    """
    path = Path(path)
    tags = load_tag_map(tag_map) if tag_map is not None else None
    report = LoadReport()
    scans: dict[str, Scan] = {}
    order: list[str] = []
    seen_ids: set[str] = set()
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in REQUIRED_COLUMNS:
            if col not in header:
                raise SchemaError(f"{path}: missing required column {col!r}")
        for row in reader:
            report.rows += 1
            sid = row["scan_id"].strip()
            if sid not in seen_ids:
                seen_ids.add(sid)
                order.append(sid)
            try:
                x, y = float(row["x"]), float(row["y"])
                floor = _opt_int(row.get("floor") or "")
                rssi_text = (row["rssi"] or "").strip()
                bssid = canonical_bssid(row["bssid"] or "")
            except ValueError:
                report.quarantine("unparsable")
                continue
            building = (row.get("building") or "").strip() or None
            ts_text = (row.get("timestamp") or "").strip()
            if not (math.isfinite(x) and math.isfinite(y)):
                report.quarantine("non-finite position")
                continue
            if tags is not None and building is not None:
                known = tags.get(building)
                if known is None or (floor is not None and floor not in known.get("floors", [])):
                    report.quarantine("unknown tag")
                    continue
            scan = scans.get(sid)
            if scan is None:
                scan = Scan([], (x, y), floor, building, float(ts_text) if ts_text else None, sid)
                scans[sid] = scan
            if not bssid and not rssi_text:
                continue  # placeholder row for a scan with no detections
            try:
                rssi = float(rssi_text)
            except ValueError:
                report.quarantine("unparsable")
                continue
            if not bssid:
                report.quarantine("empty bssid")
                continue
            if not (RSSI_FLOOR <= rssi <= RSSI_CEIL):
                report.quarantine("rssi out of range")
                continue
            scan.detections.append((bssid, rssi))
    out = []
    for sid in order:
        scan = scans.get(sid)
        if scan is None:
            continue
        if not scan.detections:
            report.quarantined_scans += 1
            continue
        out.append(scan)
    report.scans = len(out)
    if report.quarantined_rows or report.quarantined_scans:
        logger.warning(
            "%s: quarantined %d rows and %d empty scans (%s)",
            path, report.quarantined_rows, report.quarantined_scans, report.reasons,
        )
    return (out, report) if with_report else out


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def save_scans(scans: Sequence[Scan], path) -> None:
    """Write long-format CSV; floats use repr so reloading is lossless."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LONG_COLUMNS + ("timestamp",))
        for i, scan in enumerate(scans):
            sid = scan.scan_id or str(i)
            base = [sid, _fmt(scan.building), _fmt(scan.floor),
                    _fmt(float(scan.position[0])), _fmt(float(scan.position[1]))]
            ts = _fmt(scan.timestamp)
            if not scan.detections:
                writer.writerow(base + ["", "", ts])
            for bssid, rssi in scan.detections:
                writer.writerow(base + [bssid, _fmt(float(rssi)), ts])


def save_wide(scans: Sequence[Scan], path, bssids: Sequence[str] | None = None,
              fill: float = RSSI_FLOOR) -> list[str]:
    """Flattened export: one row per scan, one RSSI column per BSSID.

    Undetected BSSIDs are written as ``fill``. Returns the column order used.
    """
    if bssids is None:
        bssids = sorted({b for s in scans for b, _ in s.detections})
    index = {b: j for j, b in enumerate(bssids)}
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["scan_id", "building", "floor", "x", "y", *bssids])
        for i, scan in enumerate(scans):
            row = [fill] * len(bssids)
            for b, r in scan.detections:
                j = index.get(b)
                if j is not None:
                    row[j] = max(row[j], r) if row[j] != fill else r
            writer.writerow([scan.scan_id or str(i), _fmt(scan.building), _fmt(scan.floor),
                             _fmt(float(scan.position[0])), _fmt(float(scan.position[1])),
                             *[_fmt(float(v)) for v in row]])
    return list(bssids)


def load_tag_map(path) -> dict:
    with Path(path).open() as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise SchemaError(f"{path}: tag map must be a JSON object")
    for name, meta in data.items():
        if not isinstance(meta, dict) or "floors" not in meta:
            raise SchemaError(f"{path}: building {name!r} lacks a 'floors' list")
    return data


def save_tag_map(tags: dict, path) -> None:
    with Path(path).open("w") as fh:
        json.dump(tags, fh, indent=2, sort_keys=True)
        fh.write("\n")


def tag_map_from_scans(scans: Iterable[Scan], areas: dict[str, float] | None = None) -> dict:
    floors: dict[str, set] = {}
    for s in scans:
        if s.building is not None:
            floors.setdefault(s.building, set())
            if s.floor is not None:
                floors[s.building].add(s.floor)
    areas = areas or {}
    return {b: {"floors": sorted(f), "area_m2": areas.get(b)} for b, f in sorted(floors.items())}


# ---------------------------------------------------------------- experiments

@dataclass
class ExperimentSpec:
    """Which scans belong to a task and how they are split.

    ``buildings``/``floors`` of None mean "no restriction". ``class_field``
    names the tag predicted by a multi-task head and used for stratification.
    """

    id: str
    buildings: list[str] | None = None
    floors: list[int] | None = None
    class_field: str = "none"
    multi_task: bool = False
    split_seed: int = 0
    test_fraction: float = 0.2
    val_fraction: float = 0.15

    def __post_init__(self):
        self.id = self.id.upper()
        if self.id not in ("E1", "E2", "E3"):
            raise ValueError(f"experiment id must be E1, E2 or E3, got {self.id!r}")
        if self.class_field not in ("none", "building", "floor"):
            raise ValueError(f"class_field must be none, building or floor, got {self.class_field!r}")
        if self.multi_task and self.class_field == "none":
            raise ValueError("a multi-task experiment needs class_field building or floor")
        for name in ("test_fraction", "val_fraction"):
            if not 0 < getattr(self, name) < 0.5:
                raise ValueError(f"{name} must lie in (0, 0.5), got {getattr(self, name)}")

    def accepts(self, scan: Scan) -> bool:
        if self.buildings is not None and scan.building not in self.buildings:
            return False
        if self.floors is not None and scan.floor not in self.floors:
            return False
        return True

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "id", "buildings", "floors", "class_field", "multi_task",
            "split_seed", "test_fraction", "val_fraction")}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        return cls(**d)


def default_experiment(exp_id: str, *, multi_task: bool = False, split_seed: int = 0) -> ExperimentSpec:
    """Experiment definitions matching the synthetic worlds from ``default_world``."""
    exp_id = exp_id.upper()
    if exp_id == "E1":
        return ExperimentSpec("E1", buildings=["B1"], floors=[1], split_seed=split_seed)
    if exp_id == "E2":
        return ExperimentSpec("E2", floors=[1], class_field="building",
                              multi_task=multi_task, split_seed=split_seed)
    if exp_id == "E3":
        return ExperimentSpec("E3", buildings=["B1"], class_field="floor",
                              multi_task=multi_task, split_seed=split_seed)
    raise ValueError(f"unknown experiment {exp_id!r}")


def check_experiment(scans: Sequence[Scan], spec: ExperimentSpec) -> None:
    buildings = {s.building for s in scans}
    floors = {(s.building, s.floor) for s in scans}
    if spec.id == "E1" and len(floors) != 1:
        raise ValueError(f"E1 needs a single building and floor, found {sorted(map(str, floors))}")
    if spec.id == "E2" and len(buildings) < 2:
        raise ValueError("E2 needs first floors of at least two buildings")
    if spec.id == "E3" and (len(buildings) != 1 or len(floors) < 2):
        raise ValueError("E3 needs one building with at least two floors")


@dataclass
class Splits:
    train: list[Scan]
    val: list[Scan]
    test: list[Scan]
    classes: list = field(default_factory=list)

    def class_index(self, scan: Scan, field_name: str) -> int:
        return self.classes.index(scan.tag(field_name))


def assemble_experiment(scans: Sequence[Scan], spec: ExperimentSpec, *, min_scans: int = 50,
                        min_per_class: int = 5) -> Splits:
    """Filter scans for an experiment and split them test/val/train per stratum.

    Each stratum contributes round(test_fraction * n) test scans and
    round(val_fraction * remaining) validation scans, at least one of each,
    so every class shows up in every split.
    """
    chosen = [s for s in scans if spec.accepts(s)]
    if len(chosen) < min_scans:
        raise ValueError(f"{spec.id}: {len(chosen)} scans after filtering, need at least {min_scans}")
    check_experiment(chosen, spec)
    strata: dict = {}
    for i, s in enumerate(chosen):
        strata.setdefault(s.tag(spec.class_field), []).append(i)
    if spec.class_field != "none":
        for key, members in strata.items():
            if len(members) < min_per_class:
                raise StratificationError(
                    f"{spec.id}: class {key!r} has {len(members)} scans, need {min_per_class}")
    rng = np.random.default_rng(spec.split_seed)
    train_idx, val_idx, test_idx = [], [], []
    for key in sorted(strata, key=str):
        members = np.array(strata[key])
        rng.shuffle(members)
        n = len(members)
        n_test = max(1, int(round(spec.test_fraction * n)))
        n_val = max(1, int(round(spec.val_fraction * (n - n_test))))
        if n - n_test - n_val < 1:
            raise StratificationError(f"{spec.id}: class {key!r} too small to split")
        test_idx.extend(members[:n_test])
        val_idx.extend(members[n_test:n_test + n_val])
        train_idx.extend(members[n_test + n_val:])
    pick = lambda idx: [chosen[i] for i in sorted(idx)]  # noqa: E731
    classes = sorted(strata, key=str) if spec.class_field != "none" else []
    return Splits(pick(train_idx), pick(val_idx), pick(test_idx), classes)


# ---------------------------------------------------------------- simulator

@dataclass
class Building:
    name: str
    origin: tuple[float, float]
    extent: tuple[float, float]
    floors: tuple[int, ...] = (1,)
    area_m2: float | None = None

    def contains(self, x: float, y: float) -> bool:
        return (self.origin[0] <= x <= self.origin[0] + self.extent[0]
                and self.origin[1] <= y <= self.origin[1] + self.extent[1])


@dataclass
class AccessPoint:
    bssid: str
    x: float
    y: float
    floor: int = 1
    building: str | None = None


@dataclass
class SynthWorld:
    """Log-distance path-loss world. Distances in meters, powers in dBm."""

    aps: list[AccessPoint]
    buildings: list[Building]
    tx_power_dbm: float = -30.0
    path_loss_exponent: float = 3.0
    noise_sigma: float = 4.0
    detect_threshold: float = -95.0
    floor_attenuation: float = 15.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.aps:
            raise ValueError("world has no access points")
        if not self.buildings:
            raise ValueError("world has no walkable building")
        if self.path_loss_exponent <= 0:
            raise ValueError("path loss exponent must be positive")
        if self.detect_threshold <= RSSI_FLOOR:
            raise ValueError(f"detect threshold must exceed {RSSI_FLOOR} dBm")
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be non-negative")
        for ap in self.aps:
            if not any(b.contains(ap.x, ap.y) for b in self.buildings):
                raise ValueError(f"access point {ap.bssid} lies outside every building")

    @property
    def ap_positions(self) -> np.ndarray:
        return np.array([[ap.x, ap.y, ap.floor] for ap in self.aps], dtype=float)

    def mean_rssi(self, x: float, y: float, floor: int = 1) -> np.ndarray:
        """Noise-free received power from every AP at (x, y, floor)."""
        pos = self.ap_positions
        dist = np.hypot(pos[:, 0] - x, pos[:, 1] - y)
        loss = 10.0 * self.path_loss_exponent * np.log10(np.maximum(dist, 1.0))
        return self.tx_power_dbm - loss - self.floor_attenuation * np.abs(pos[:, 2] - floor)


def _bssid(building_idx: int, ap_idx: int) -> str:
    return f"02:00:00:{building_idx:02x}:{ap_idx // 256:02x}:{ap_idx % 256:02x}"


def grid_aps(building: Building, count: int, rng: np.random.Generator, *, building_idx: int = 0,
             floors: Sequence[int] = (1,), jitter: float = 0.3, start: int = 0) -> list[AccessPoint]:
    """Place ``count`` APs per floor on a jittered grid covering the footprint."""
    w, h = building.extent
    cols = max(1, int(round(math.sqrt(count * w / h))))
    rows = math.ceil(count / cols)
    aps = []
    k = start
    for floor in floors:
        cells = [(i, j) for j in range(rows) for i in range(cols)][:count]
        for i, j in cells:
            cx = (i + 0.5 + rng.uniform(-jitter, jitter)) * w / cols
            cy = (j + 0.5 + rng.uniform(-jitter, jitter)) * h / rows
            aps.append(AccessPoint(_bssid(building_idx, k), building.origin[0] + cx,
                                   building.origin[1] + cy, floor, building.name))
            k += 1
    return aps


def default_world(experiment: str = "E1", seed: int = 0, *, gap: float = 150.0, **overrides) -> SynthWorld:
    """Desk-scale stand-ins for the three experiment shapes.

    E1: one 50 m x 30 m floor with 20 APs. E2: three such buildings in a row
    with ``gap`` meters of open ground between footprints and disjoint AP
    sets. E3: one building, three floors sharing the footprint, 20 APs per
    floor.
    """
    rng = np.random.default_rng(seed)
    experiment = experiment.upper()
    extent = (50.0, 30.0)
    if experiment == "E1":
        b = Building("B1", (0.0, 0.0), extent, (1,), extent[0] * extent[1])
        return SynthWorld(grid_aps(b, 20, rng), [b], **overrides)
    if experiment == "E2":
        pitch = extent[0] + gap
        buildings = [Building(f"B{i + 1}", (pitch * i, 0.0), extent, (1,), extent[0] * extent[1])
                     for i in range(3)]
        aps = [ap for i, b in enumerate(buildings) for ap in grid_aps(b, 20, rng, building_idx=i)]
        return SynthWorld(aps, buildings, **overrides)
    if experiment == "E3":
        b = Building("B1", (0.0, 0.0), extent, (1, 2, 3), extent[0] * extent[1])
        return SynthWorld(grid_aps(b, 20, rng, floors=(1, 2, 3)), [b], **overrides)
    raise ValueError(f"unknown experiment {experiment!r}")


def _draw_scan(world: SynthWorld, rng: np.random.Generator) -> tuple[Scan, bool]:
    weights = np.array([b.extent[0] * b.extent[1] * len(b.floors) for b in world.buildings])
    b = world.buildings[rng.choice(len(world.buildings), p=weights / weights.sum())]
    floor = int(b.floors[rng.integers(len(b.floors))])
    x = b.origin[0] + rng.uniform(0.0, b.extent[0])
    y = b.origin[1] + rng.uniform(0.0, b.extent[1])
    rssi = world.mean_rssi(x, y, floor) + rng.normal(0.0, world.noise_sigma, len(world.aps))
    keep = rssi >= world.detect_threshold
    dets = [(ap.bssid, float(np.clip(r, RSSI_FLOOR, RSSI_CEIL)))
            for ap, r, k in zip(world.aps, rssi, keep) if k]
    return Scan(dets, (float(x), float(y)), floor, b.name), bool(dets)


def generate_synthetic(world: SynthWorld, n_scans: int, seed: int = 0) -> list[Scan]:
    """Sample scans uniformly over the walkable area of ``world``.

    Each scan draws from its own RNG stream keyed on (seed, index); scans with
    no detection above threshold are redrawn from the same stream.
    """
    world.validate()
    if n_scans < 1:
        raise ValueError("n_scans must be at least 1")
    out = []
    for i in range(n_scans):
        rng = np.random.default_rng([seed, i])
        for _ in range(1000):
            scan, ok = _draw_scan(world, rng)
            if ok:
                break
        else:
            raise RuntimeError("could not draw a scan with any detection; check detect_threshold")
        scan.scan_id = f"s{i:06d}"
        scan.timestamp = float(i)
        out.append(scan)
    return out


def world_tag_map(world: SynthWorld) -> dict:
    return {b.name: {"floors": list(b.floors), "area_m2": b.area_m2} for b in world.buildings}
