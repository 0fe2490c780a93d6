"""Window construction from configured sources, selection and window stores."""

from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path
from typing import Sequence

import numpy as np

from ..data import DatasetSplit, Track, gen_synthetic, load_tracks, split
from ..errors import ConfigError, FormatError
from ..preprocess import LaneTable, Window, WindowStats, build_windows
from ..social import GridSpec
from .config import DataConfig

log = logging.getLogger(__name__)


def load_source_tracks(cfg: DataConfig) -> list[Track]:
    if cfg.source == "synthetic":
        return gen_synthetic(cfg.synthetic, cfg.seed)
    if cfg.path is None:
        raise ConfigError(f"data source {cfg.source!r} needs a path")
    return load_tracks(cfg.path)


def lateral_cue(w: Window, frames: int = 5) -> float:
    """Ego lateral displacement over the last ``frames`` history steps (feet)."""
    x = w.states[0, :, 0]
    return float(abs(x[-1] - x[-1 - min(frames, len(x) - 1)]))


def select_windows(windows: Sequence[Window], lane_change_fraction: float | None, seed: int,
                   min_lateral_cue_ft: float = 0.0, max_windows: int | None = None) -> list[Window]:
    """Subsample to a target share of lane-change windows.

    Lane-change windows whose ego has not yet moved sideways by
    ``min_lateral_cue_ft`` over the last second are dropped first.
    """
    rng = np.random.default_rng(seed)
    keep = [w for w in windows if w.label == "keep"]
    change = [w for w in windows if w.label != "keep" and lateral_cue(w) >= min_lateral_cue_ft]
    if lane_change_fraction is not None:
        if not 0.0 <= lane_change_fraction < 1.0:
            raise ConfigError("lane_change_fraction must lie in [0, 1)")
        n_change = len(change)
        n_keep = len(keep)
        # largest set honouring the ratio
        if n_change and lane_change_fraction > 0:
            want_keep = int(round(n_change * (1 - lane_change_fraction) / lane_change_fraction))
            if want_keep > n_keep:
                n_change = int(round(n_keep * lane_change_fraction / (1 - lane_change_fraction)))
            else:
                n_keep = want_keep
        else:
            n_change = 0
        if max_windows is not None and n_keep + n_change > max_windows:
            n_change = int(round(max_windows * lane_change_fraction))
            n_keep = max_windows - n_change
        keep = [keep[i] for i in sorted(rng.choice(len(keep), n_keep, replace=False))]
        change = [change[i] for i in sorted(rng.choice(len(change), n_change, replace=False))]
        out = keep + change
    else:
        out = keep + change
        if max_windows is not None and len(out) > max_windows:
            out = [out[i] for i in sorted(rng.choice(len(out), max_windows, replace=False))]
    return sorted(out, key=lambda w: (w.site, w.ego_id, w.t))


def load_windows(cfg: DataConfig, grid: GridSpec = GridSpec()) -> tuple[list[Window], WindowStats]:
    tracks = load_source_tracks(cfg)
    stats = WindowStats()
    lanes = LaneTable(cfg.lane_width, cfg.lane_centers)
    windows = build_windows(tracks, cfg.rate, cfg.t_h, cfg.t_f, cfg.stride, lanes, grid,
                            cfg.heading_lag, stats)
    windows = select_windows(windows, cfg.lane_change_fraction, cfg.seed, cfg.min_lateral_cue_ft,
                             cfg.max_windows)
    log.info("built %d windows (%s)", len(windows), stats)
    return windows, stats


def load_split(cfg: DataConfig, grid: GridSpec = GridSpec()) -> DatasetSplit:
    windows, _ = load_windows(cfg, grid)
    return split(windows, cfg.split_fraction, cfg.split_seed)


def windows_hash(windows: Sequence[Window]) -> str:
    h = hashlib.sha256()
    for w in windows:
        h.update(w.window_id.encode())
        h.update(np.ascontiguousarray(w.states).tobytes())
        h.update(np.ascontiguousarray(w.future).tobytes())
    return h.hexdigest()[:16]


def save_windows(windows: Sequence[Window], path: str | Path) -> None:
    """One JSON object per window."""
    with open(path, "w") as fh:
        for w in windows:
            fh.write(json.dumps({
                "window_id": w.window_id, "site": w.site, "ego_id": int(w.ego_id), "t": int(w.t),
                "vehicle_ids": [int(v) for v in w.vehicle_ids], "states": w.states.tolist(),
                "padded": w.padded.tolist(), "cells": w.cells.tolist(), "future": w.future.tolist(),
                "label": w.label,
            }) + "\n")


def read_windows(path: str | Path) -> list[Window]:
    out = []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                out.append(Window(d["window_id"], d["site"], int(d["ego_id"]), int(d["t"]),
                                  list(d["vehicle_ids"]), np.asarray(d["states"], dtype=np.float64),
                                  np.asarray(d["padded"], dtype=bool),
                                  np.asarray(d["cells"], dtype=np.int64).reshape(-1, 2),
                                  np.asarray(d["future"], dtype=np.float64), d["label"]))
            except (KeyError, ValueError, TypeError) as exc:
                raise FormatError(f"{path}:{n}: bad window record ({exc})") from None
    return out


def is_window_store(path: str | Path) -> bool:
    with open(path) as fh:
        first = fh.readline()
    return first.lstrip().startswith("{") and '"window_id"' in first
