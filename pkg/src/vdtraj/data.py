"""Trajectory sources: NGSIM CSV ingestion, the canonical NDJSON track store,
a deterministic synthetic highway generator, maneuver labels and splits."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, FormatError, SplitError

log = logging.getLogger(__name__)

MANEUVERS = ("keep", "left", "right")
NATIVE_RATE_HZ = 10

NGSIM_COLUMNS = {
    "Vehicle_ID": "vehicle_id",
    "Frame_ID": "frame",
    "Local_X": "x",
    "Local_Y": "y",
    "v_Vel": "v",
    "v_Acc": "a",
    "Lane_ID": "lane",
    "v_Class": "vclass",
    "v_Width": "width",
    "v_Length": "length",
}

_FIELDS = ("frame", "x", "y", "v", "a", "lane", "width", "length", "vclass")


@dataclass
class Track:
    """Frames of one vehicle, in feet and seconds, ordered by frame index."""

    vehicle_id: int
    frame: np.ndarray
    x: np.ndarray
    y: np.ndarray
    v: np.ndarray
    a: np.ndarray
    lane: np.ndarray
    width: np.ndarray
    length: np.ndarray
    vclass: np.ndarray
    site: str = ""

    def __post_init__(self):
        self.frame = np.asarray(self.frame, dtype=np.int64)
        for name in ("x", "y", "v", "a", "width", "length", "vclass"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        self.lane = np.asarray(self.lane, dtype=np.int64)
        n = len(self.frame)
        for name in _FIELDS:
            if len(getattr(self, name)) != n:
                raise ValueError(f"track {self.vehicle_id}: field {name} has wrong length")
        if n > 1 and np.any(np.diff(self.frame) <= 0):
            raise ValueError(f"track {self.vehicle_id}: frame indices must increase strictly")

    def __len__(self) -> int:
        return len(self.frame)

    def select(self, idx) -> "Track":
        return Track(self.vehicle_id, *(getattr(self, f)[idx] for f in _FIELDS), site=self.site)

    def index_of(self, frame: int) -> int:
        i = int(np.searchsorted(self.frame, frame))
        if i < len(self.frame) and self.frame[i] == frame:
            return i
        raise KeyError(f"vehicle {self.vehicle_id} has no frame {frame}")

    def same_as(self, other: "Track") -> bool:
        return (self.vehicle_id == other.vehicle_id and self.site == other.site
                and all(np.array_equal(getattr(self, f), getattr(other, f)) for f in _FIELDS))


# ---------------------------------------------------------------- NGSIM CSV

@dataclass
class ParseResult:
    tracks: list[Track]
    skipped_rows: int = 0


def parse_ngsim(path: str | Path, site: str | None = None) -> ParseResult:
    """Read an NGSIM trajectory CSV into contiguous per-vehicle tracks.

    Only the ten columns in ``NGSIM_COLUMNS`` are used; their order is free.
    Rows with unparsable values are skipped and counted.  A vehicle whose
    frame indices jump by more than one is split into separate tracks.
    """
    path = Path(path)
    site = site if site is not None else path.stem
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        if not header:
            raise FormatError(f"{path}: empty file")
        reader.fieldnames = header
        for col in NGSIM_COLUMNS:
            if col not in header:
                raise FormatError(f"{path}: missing required column {col!r}")
        rows: dict[int, list[tuple]] = {}
        skipped = 0
        for row in reader:
            try:
                vid = int(float(row["Vehicle_ID"]))
                rec = (
                    int(float(row["Frame_ID"])),
                    float(row["Local_X"]), float(row["Local_Y"]),
                    float(row["v_Vel"]), float(row["v_Acc"]),
                    int(float(row["Lane_ID"])),
                    float(row["v_Width"]), float(row["v_Length"]),
                    float(row["v_Class"]),
                )
            except (TypeError, ValueError):
                skipped += 1
                continue
            if not all(math.isfinite(val) for val in rec):
                skipped += 1
                continue
            rows.setdefault(vid, []).append(rec)
    if not rows and skipped == 0:
        raise FormatError(f"{path}: no data rows")

    tracks = []
    for vid in sorted(rows):
        recs = sorted(rows[vid])
        # duplicate frames: keep the first occurrence
        uniq = [recs[0]] + [r for p, r in zip(recs, recs[1:]) if r[0] != p[0]]
        arr = np.array(uniq, dtype=np.float64)
        frames = arr[:, 0].astype(np.int64)
        breaks = np.flatnonzero(np.diff(frames) != 1) + 1
        for seg in np.split(np.arange(len(frames)), breaks):
            a = arr[seg]
            tracks.append(Track(vid, frames[seg], a[:, 1], a[:, 2], a[:, 3], a[:, 4],
                                a[:, 5].astype(np.int64), a[:, 6], a[:, 7], a[:, 8], site=site))
    if skipped:
        log.info("%s: skipped %d malformed rows", path, skipped)
    return ParseResult(tracks, skipped)


def write_ngsim_csv(tracks: Iterable[Track], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(NGSIM_COLUMNS))
        for t in tracks:
            for i in range(len(t)):
                w.writerow([t.vehicle_id, int(t.frame[i]), repr(float(t.x[i])), repr(float(t.y[i])),
                            repr(float(t.v[i])), repr(float(t.a[i])), int(t.lane[i]),
                            repr(float(t.vclass[i])), repr(float(t.width[i])), repr(float(t.length[i]))])


# ------------------------------------------------------------ track store

_STORE_KEYS = ("vehicleId", "frameIndex", "x", "y", "v", "a", "laneId", "W", "L", "C")


def write_tracks(tracks: Iterable[Track], path: str | Path) -> None:
    """Canonical store: one JSON object per frame per line."""
    with open(path, "w") as fh:
        for t in tracks:
            for i in range(len(t)):
                fh.write(json.dumps({
                    "vehicleId": int(t.vehicle_id), "frameIndex": int(t.frame[i]),
                    "x": float(t.x[i]), "y": float(t.y[i]), "v": float(t.v[i]), "a": float(t.a[i]),
                    "laneId": int(t.lane[i]), "W": float(t.width[i]), "L": float(t.length[i]),
                    "C": float(t.vclass[i]), "site": t.site,
                }) + "\n")


def read_tracks(path: str | Path) -> list[Track]:
    groups: dict[tuple[str, int], list[dict]] = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                key = (rec.get("site", ""), int(rec["vehicleId"]))
                missing = [k for k in _STORE_KEYS if k not in rec]
                if missing:
                    raise KeyError(", ".join(missing))
            except (ValueError, KeyError, TypeError) as exc:
                raise FormatError(f"{path}:{n}: bad record ({exc})") from None
            groups.setdefault(key, []).append(rec)
    tracks = []
    for (site, vid), recs in groups.items():
        recs.sort(key=lambda r: r["frameIndex"])
        frames = np.array([r["frameIndex"] for r in recs], dtype=np.int64)
        breaks = np.flatnonzero(np.diff(frames) <= 0)
        if len(breaks):
            raise FormatError(f"{path}: duplicate frame for vehicle {vid}")
        # split runs the same way the CSV parser does so a stored track set round-trips
        idx_runs = np.split(np.arange(len(recs)), np.flatnonzero(np.diff(frames) != 1) + 1)
        for run in idx_runs:
            sub = [recs[i] for i in run]
            tracks.append(Track(vid, [r["frameIndex"] for r in sub], [r["x"] for r in sub],
                                [r["y"] for r in sub], [r["v"] for r in sub], [r["a"] for r in sub],
                                [r["laneId"] for r in sub], [r["W"] for r in sub],
                                [r["L"] for r in sub], [r["C"] for r in sub], site=site))
    return tracks


def load_tracks(path: str | Path) -> list[Track]:
    """NGSIM CSV (``.csv``/``.txt``) or canonical NDJSON, by suffix."""
    path = Path(path)
    if path.suffix.lower() in (".csv", ".txt"):
        return parse_ngsim(path).tracks
    return read_tracks(path)


# ---------------------------------------------------------------- labels

def label_maneuver(track: Track, t: int, horizon: int) -> str | None:
    """Lane at frame ``t`` versus ``horizon`` frames later (frame units of the track).

    NGSIM numbers lanes left to right, so a smaller lane id means a move left.
    Returns ``None`` when the track does not reach ``t + horizon``.
    """
    try:
        i0 = track.index_of(t)
        i1 = track.index_of(t + horizon)
    except KeyError:
        return None
    d = int(track.lane[i1]) - int(track.lane[i0])
    if d == 0:
        return "keep"
    return "left" if d < 0 else "right"


# ------------------------------------------------------------- synthetic

@dataclass
class SyntheticConfig:
    n_vehicles: int = 40
    n_lanes: int = 5
    lane_width: float = 12.0
    speed_range: tuple[float, float] = (40.0, 70.0)
    lane_change_prob: float = 0.3
    duration_s: float = 20.0
    noise_std: float = 0.0
    transition_s: float = 3.0
    road_length: float = 600.0
    width_range: tuple[float, float] = (5.5, 8.5)
    length_range: tuple[float, float] = (12.0, 40.0)
    classes: tuple[int, ...] = (1, 2, 3)
    site: str = "synthetic"

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticConfig":
        d = dict(d)
        for k in ("speed_range", "width_range", "length_range", "classes"):
            if k in d:
                d[k] = tuple(d[k])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown synthetic config keys: {sorted(unknown)}")
        return cls(**d)


def lane_change_profile(tau: np.ndarray, duration: float, width: float) -> np.ndarray:
    """Logistic lateral offset reaching ~1% / ~99% of ``width`` at the ends of the transition."""
    k = math.log(99.0) / (duration / 2.0)
    prof = width / (1.0 + np.exp(-k * (tau - duration / 2.0)))
    return np.where(tau <= 0, 0.0, np.where(tau >= duration, width, prof))


def gen_synthetic(config: SyntheticConfig, seed: int) -> list[Track]:
    """Constant-speed highway traffic at 10 Hz with occasional one-lane changes.

    Positions are generated noise-free, ``v``/``a`` are finite differences of
    those clean positions, then Gaussian position noise is added.
    """
    c = config
    if c.n_lanes <= 0 or c.n_vehicles <= 0:
        raise ConfigError("synthetic config needs positive lane and vehicle counts")
    if c.duration_s <= 0 or c.lane_width <= 0:
        raise ConfigError("duration and lane width must be positive")
    rng = np.random.default_rng(seed)
    dt = 1.0 / NATIVE_RATE_HZ
    n = int(round(c.duration_s * NATIVE_RATE_HZ)) + 1
    time = np.arange(n) * dt
    frames = np.arange(n, dtype=np.int64)
    tracks = []
    for vid in range(1, c.n_vehicles + 1):
        lane0 = int(rng.integers(1, c.n_lanes + 1))
        speed = float(rng.uniform(*c.speed_range))
        y0 = float(rng.uniform(0.0, c.road_length))
        width = float(rng.uniform(*c.width_range))
        length = float(rng.uniform(*c.length_range))
        vclass = float(rng.choice(c.classes))
        x_center = (lane0 - 0.5) * c.lane_width
        lateral = np.zeros(n)
        changes = rng.random() < c.lane_change_prob and c.n_lanes > 1
        direction = 0
        if changes:
            options = [d for d in (-1, 1) if 1 <= lane0 + d <= c.n_lanes]
            direction = int(rng.choice(options))
            onset = float(rng.uniform(0.0, max(c.duration_s - c.transition_s, 0.0)))
            lateral = direction * lane_change_profile(time - onset, c.transition_s, c.lane_width)
        x_clean = x_center + lateral
        y_clean = y0 + speed * time
        # lane id follows the lateral position (lane boundaries every lane_width)
        lane = np.clip(np.floor(x_clean / c.lane_width).astype(np.int64) + 1, 1, c.n_lanes)
        vx = np.gradient(x_clean, dt)
        vy = np.gradient(y_clean, dt)
        v = np.hypot(vx, vy)
        a = np.gradient(v, dt)
        x = x_clean + rng.normal(0.0, c.noise_std, n) if c.noise_std > 0 else x_clean
        y = y_clean + rng.normal(0.0, c.noise_std, n) if c.noise_std > 0 else y_clean
        tracks.append(Track(vid, frames.copy(), x, y, v, a, lane, np.full(n, width),
                            np.full(n, length), np.full(n, vclass), site=c.site))
    return tracks


# ----------------------------------------------------------------- split

@dataclass
class DatasetSplit:
    train: list
    test: list
    seed: int
    fraction: float
    train_vehicles: list = field(default_factory=list)
    test_vehicles: list = field(default_factory=list)


def _vehicle_key(w) -> tuple:
    return (getattr(w, "site", ""), int(w.ego_id))


def split(windows: Sequence, fraction: float = 0.8, seed: int = 0) -> DatasetSplit:
    """Vehicle-level train/test split: every window of a vehicle lands on one side."""
    if not 0.0 < fraction < 1.0:
        raise SplitError(f"fraction must lie in (0, 1), got {fraction}")
    vehicles = sorted({_vehicle_key(w) for w in windows})
    if len(vehicles) < 2:
        raise SplitError(f"need at least 2 vehicles to split, got {len(vehicles)}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(vehicles))
    n_train = min(max(int(round(fraction * len(vehicles))), 1), len(vehicles) - 1)
    train_v = {vehicles[i] for i in order[:n_train]}
    train = [w for w in windows if _vehicle_key(w) in train_v]
    test = [w for w in windows if _vehicle_key(w) not in train_v]
    return DatasetSplit(train, test, seed, fraction,
                        sorted(train_v), sorted(set(vehicles) - train_v))
