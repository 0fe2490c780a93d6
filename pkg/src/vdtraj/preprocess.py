"""Per-frame vehicle state features, normalisation, whitening and history/future windows."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data import NATIVE_RATE_HZ, Track, label_maneuver
from .errors import ConfigError, InsufficientHistoryError, NumericError, UsageError
from .social import GridSpec, assign_cell

FEATURES = ("x", "y", "dx", "v", "a", "psi", "W", "L", "C", "laneId")
N_FEATURES = len(FEATURES)
FORMAT_VERSION = 1


def downsample(track: Track, rate: int, phase: int | None = None) -> Track:
    """Keep every ``rate``-th frame.

    By default counting starts at the track's first frame.  ``phase`` instead
    keeps frames whose index is congruent to ``phase`` mod ``rate``, which keeps
    tracks of one scene on a common clock.
    """
    if rate < 1:
        raise ValueError(f"rate must be >= 1, got {rate}")
    if len(track) == 0:
        return track
    if phase is None:
        idx = np.arange(0, len(track), rate)
    else:
        idx = np.flatnonzero(track.frame % rate == phase % rate)
    return track.select(idx)


@dataclass(frozen=True)
class LaneTable:
    """Lateral position of lane centres, in the Local_X coordinate (feet)."""

    lane_width: float = 12.0
    centers: dict | None = None

    def center(self, lane):
        lane = np.asarray(lane)
        if self.centers:
            return np.vectorize(lambda k: float(self.centers[int(k)]))(lane).astype(np.float64)
        return (lane - 0.5) * self.lane_width


def heading_series(x: np.ndarray, y: np.ndarray, lag: int = 3) -> np.ndarray:
    """Heading at every frame from displacement over ``lag`` frames (atan2(Δx, Δy)).

    The first frames fall back to the earliest available pair; near-zero
    displacement gives 0.
    """
    n = len(x)
    if n < 2:
        raise InsufficientHistoryError("heading needs at least 2 frames")
    i = np.arange(n)
    j = np.maximum(i - lag, 0)
    i = np.where(i == 0, 1, i)
    dx = x[i] - x[j]
    dy = y[i] - y[j]
    psi = np.arctan2(dx, dy)
    return np.where(np.hypot(dx, dy) < 1e-6, 0.0, psi)


def heading_angle(track: Track, t: int, lag: int = 3) -> float:
    """Heading (radians, 0 = straight along +y) of ``track`` at frame ``t``."""
    if len(track) < 2:
        raise InsufficientHistoryError(f"vehicle {track.vehicle_id}: heading needs at least 2 frames")
    k = track.index_of(t)
    return float(heading_series(track.x[: k + 2], track.y[: k + 2], lag)[k])


def state_features(track: Track, lanes: LaneTable = LaneTable(), heading_lag: int = 3) -> np.ndarray:
    """(n, 10) global-frame states in FEATURES order for every frame of ``track``."""
    psi = heading_series(track.x, track.y, heading_lag) if len(track) >= 2 else np.zeros(len(track))
    dx = track.x - lanes.center(track.lane)
    return np.column_stack([track.x, track.y, dx, track.v, track.a, psi,
                            track.width, track.length, track.vclass, track.lane.astype(np.float64)])


def to_ego_frame(states: np.ndarray, ego_xy) -> np.ndarray:
    """Translate the x/y columns so ``ego_xy`` becomes the origin."""
    out = np.array(states, dtype=np.float64, copy=True)
    out[..., 0] -= ego_xy[0]
    out[..., 1] -= ego_xy[1]
    return out


# ---------------------------------------------------------- normalisation

@dataclass
class NormalizationParams:
    lo: np.ndarray
    hi: np.ndarray
    features: tuple[str, ...] = FEATURES

    def to_dict(self) -> dict:
        return {"kind": "minmax", "version": FORMAT_VERSION, "features": list(self.features),
                "min": self.lo.tolist(), "max": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationParams":
        return cls(np.asarray(d["min"], dtype=np.float64), np.asarray(d["max"], dtype=np.float64),
                   tuple(d["features"]))


def fit_minmax(states: np.ndarray, features: Sequence[str] = FEATURES) -> NormalizationParams:
    states = np.asarray(states, dtype=np.float64)
    if states.ndim != 2 or states.shape[0] == 0:
        raise ValueError("fit_minmax needs a non-empty (n, d) array")
    if not np.all(np.isfinite(states)):
        raise NumericError("non-finite training states")
    return NormalizationParams(states.min(axis=0), states.max(axis=0), tuple(features))


def apply_minmax(states: np.ndarray, params: NormalizationParams) -> np.ndarray:
    span = params.hi - params.lo
    safe = np.where(span > 0, span, 1.0)
    out = (np.asarray(states, dtype=np.float64) - params.lo) / safe
    out = np.where(span > 0, out, 0.0)
    return np.clip(out, 0.0, 1.0)


def invert_minmax(normed: np.ndarray, params: NormalizationParams) -> np.ndarray:
    return params.lo + np.asarray(normed) * (params.hi - params.lo)


@dataclass
class WhiteningParams:
    mean: np.ndarray
    matrix: np.ndarray
    eps: float
    eigenvalues: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def to_dict(self) -> dict:
        return {"kind": "zca", "version": FORMAT_VERSION, "mean": self.mean.tolist(),
                "matrix": self.matrix.ravel().tolist(), "dim": int(self.matrix.shape[0]),
                "eps": self.eps, "eigenvalues": self.eigenvalues.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "WhiteningParams":
        n = int(d["dim"])
        return cls(np.asarray(d["mean"], dtype=np.float64),
                   np.asarray(d["matrix"], dtype=np.float64).reshape(n, n), float(d["eps"]),
                   np.asarray(d.get("eigenvalues", []), dtype=np.float64))


def fit_zca(states: np.ndarray, eps: float = 1e-5) -> WhiteningParams:
    """ZCA whitening U (Λ + εI)^(-1/2) Uᵀ from the population covariance."""
    x = np.asarray(states, dtype=np.float64)
    if eps <= 0:
        raise ValueError("eps must be positive")
    if x.ndim != 2 or x.shape[0] <= x.shape[1]:
        raise ValueError(f"fit_zca needs more samples than features, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite values in whitening input")
    mu = x.mean(axis=0)
    xc = x - mu
    cov = xc.T @ xc / x.shape[0]
    lam, U = np.linalg.eigh(cov)
    lam = np.clip(lam, 0.0, None)
    m = (U * (1.0 / np.sqrt(lam + eps))) @ U.T
    m = 0.5 * (m + m.T)
    return WhiteningParams(mu, m, eps, lam)


def apply_zca(states: np.ndarray, params: WhiteningParams) -> np.ndarray:
    x = np.asarray(states, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite values in whitening input")
    return (x - params.mean) @ params.matrix.T


def save_params(path: str | Path, norm: NormalizationParams, white: WhiteningParams | None) -> None:
    doc = {"version": FORMAT_VERSION, "minmax": norm.to_dict(),
           "zca": white.to_dict() if white is not None else None}
    Path(path).write_text(json.dumps(doc, indent=1))


def load_params(path: str | Path) -> tuple[NormalizationParams, WhiteningParams | None]:
    doc = json.loads(Path(path).read_text())
    white = WhiteningParams.from_dict(doc["zca"]) if doc.get("zca") else None
    return NormalizationParams.from_dict(doc["minmax"]), white


# ------------------------------------------------------------ scenes/windows

@dataclass
class _Run:
    track: Track
    states: np.ndarray  # (n, 10) global frame


class Scene:
    """Downsampled tracks of one site, indexed by frame for neighbour lookups."""

    def __init__(self, tracks: Iterable[Track], rate: int = 2, lanes: LaneTable = LaneTable(),
                 heading_lag: int = 3, native_hz: int = NATIVE_RATE_HZ):
        self.rate = rate
        self.native_hz = native_hz
        self.lanes = lanes
        self.runs: dict[int, list[_Run]] = {}
        self.by_frame: dict[int, list[tuple[int, int]]] = {}
        sites = set()
        for tr in tracks:
            sites.add(tr.site)
            ds = downsample(tr, rate, phase=0)
            if len(ds) == 0:
                continue
            states = state_features(ds, lanes, heading_lag)
            runs = self.runs.setdefault(ds.vehicle_id, [])
            runs.append(_Run(ds, states))
            k = len(runs) - 1
            for f in ds.frame:
                self.by_frame.setdefault(int(f), []).append((ds.vehicle_id, k))
        if len(sites) > 1:
            raise ConfigError(f"a scene holds one site, got {sorted(sites)}")
        self.site = sites.pop() if sites else ""

    @property
    def hz(self) -> float:
        return self.native_hz / self.rate

    def run_at(self, vehicle_id: int, frame: int) -> tuple[_Run, int] | None:
        for run in self.runs.get(vehicle_id, ()):
            fr = run.track.frame
            i = int(np.searchsorted(fr, frame))
            if i < len(fr) and fr[i] == frame:
                return run, i
        return None

    def vehicles_at(self, frame: int) -> list[int]:
        return sorted({vid for vid, _ in self.by_frame.get(frame, ())})


@dataclass
class Window:
    window_id: str
    site: str
    ego_id: int
    t: int
    vehicle_ids: list[int]
    states: np.ndarray        # (n_vehicles, n_hist, 10), ego frame, vehicle 0 = ego
    padded: np.ndarray        # (n_vehicles, n_hist) bool
    cells: np.ndarray         # (n_vehicles, 2) grid cell at t
    future: np.ndarray        # (n_future, 2) ego positions t+1..t+n_future
    label: str | None

    @property
    def n_vehicles(self) -> int:
        return len(self.vehicle_ids)

    @property
    def distances(self) -> np.ndarray:
        last = self.states[:, -1, :2]
        return np.hypot(last[:, 0], last[:, 1])


def window_lengths(t_h: float, t_f: float, hz: float) -> tuple[int, int]:
    """History frames (inclusive of t) and future frames at ``hz``."""
    return int(round(t_h * hz)) + 1, int(round(t_f * hz))


def _history(run: _Run, i: int, n_hist: int) -> tuple[np.ndarray, np.ndarray]:
    """States for the ``n_hist`` frames ending at index ``i``, front padded by repetition."""
    start = max(i - n_hist + 1, 0)
    h = run.states[start:i + 1]
    pad = n_hist - len(h)
    mask = np.zeros(n_hist, dtype=bool)
    if pad:
        h = np.concatenate([np.repeat(h[:1], pad, axis=0), h], axis=0)
        mask[:pad] = True
    return h, mask


@dataclass
class WindowStats:
    made: int = 0
    skipped_history: int = 0
    skipped_future: int = 0
    skipped_unlabeled: int = 0
    neighbor_padded: int = 0


def make_window(scene: Scene, ego_id: int, t: int, t_h: float = 3.0, t_f: float = 5.0,
                grid: GridSpec = GridSpec(), stats: WindowStats | None = None) -> Window | None:
    """Cut the window around ``t`` (a native frame index on the scene clock).

    Returns None (and counts the reason in ``stats``) when the ego lacks the
    required history or future.
    """
    stats = stats if stats is not None else WindowStats()
    n_hist, n_fut = window_lengths(t_h, t_f, scene.hz)
    found = scene.run_at(ego_id, t)
    if found is None:
        raise KeyError(f"ego {ego_id} not present at frame {t}")
    run, i = found
    if i + 1 < n_hist:
        stats.skipped_history += 1
        return None
    if i + n_fut >= len(run.track):
        stats.skipped_future += 1
        return None
    label = label_maneuver(run.track, t, n_fut * scene.rate)
    if label is None:
        stats.skipped_unlabeled += 1
        return None

    ego_state = run.states[i]
    origin = ego_state[:2].copy()
    ids, hists, masks, cells = [ego_id], [run.states[i - n_hist + 1:i + 1]], [np.zeros(n_hist, bool)], [grid.center]
    for vid in scene.vehicles_at(t):
        if vid == ego_id:
            continue
        nb = scene.run_at(vid, t)
        if nb is None:
            continue
        nrun, j = nb
        cell = assign_cell(nrun.states[j], ego_state, grid)
        if cell is None:
            continue
        h, m = _history(nrun, j, n_hist)
        if m.any():
            stats.neighbor_padded += 1
        ids.append(vid)
        hists.append(h)
        masks.append(m)
        cells.append(cell)
    states = to_ego_frame(np.stack(hists), origin)
    future = run.states[i + 1:i + 1 + n_fut, :2] - origin
    stats.made += 1
    return Window(f"{scene.site}:{ego_id}:{t}", scene.site, ego_id, int(t), ids, states,
                  np.stack(masks), np.array(cells, dtype=np.int64), future, label)


def scene_windows(scene: Scene, t_h: float = 3.0, t_f: float = 5.0, stride: int = 5,
                  grid: GridSpec = GridSpec(), stats: WindowStats | None = None) -> list[Window]:
    """All eligible windows, every ``stride`` working frames along each ego track."""
    stats = stats if stats is not None else WindowStats()
    out = []
    n_hist, n_fut = window_lengths(t_h, t_f, scene.hz)
    for vid in sorted(scene.runs):
        for run in scene.runs[vid]:
            n = len(run.track)
            for i in range(n_hist - 1, n - n_fut, stride):
                w = make_window(scene, vid, int(run.track.frame[i]), t_h, t_f, grid, stats)
                if w is not None:
                    out.append(w)
    return out


def build_windows(tracks: Sequence[Track], rate: int = 2, t_h: float = 3.0, t_f: float = 5.0,
                  stride: int = 5, lanes: LaneTable = LaneTable(), grid: GridSpec = GridSpec(),
                  heading_lag: int = 3, stats: WindowStats | None = None) -> list[Window]:
    """Group tracks by site, build scenes and cut windows from each."""
    by_site: dict[str, list[Track]] = {}
    for tr in tracks:
        by_site.setdefault(tr.site, []).append(tr)
    out = []
    for site in sorted(by_site):
        scene = Scene(by_site[site], rate, lanes, heading_lag)
        out.extend(scene_windows(scene, t_h, t_f, stride, grid, stats))
    return out


def window_states(windows: Sequence[Window]) -> np.ndarray:
    """All (vehicle, frame) states of ``windows`` stacked to (n, 10), padding excluded."""
    rows = [w.states[~w.padded] for w in windows]
    if not rows:
        raise UsageError("no windows to collect states from")
    return np.concatenate(rows, axis=0)
