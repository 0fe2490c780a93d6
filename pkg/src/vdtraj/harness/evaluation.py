"""RMSE/NLL evaluation, the constant-velocity baseline and report output."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..data import MANEUVERS
from ..errors import EvaluationError
from ..predictor import collate, mixture_nll, point_forecast, predict_batch
from ..preprocess import Window
from .training import Checkpoint

FT_TO_M = 0.3048
HORIZONS_S = (1, 2, 3, 4, 5)


def horizon_indices(hz: float, horizons=HORIZONS_S) -> list[int]:
    """Future-frame index closest to each whole-second horizon (frame 0 is t+1)."""
    return [int(round(k * hz)) - 1 for k in horizons]


@dataclass
class MetricsReport:
    rmse_m: list[float]
    rmse_ft: list[float]
    nll: float | None
    accuracy: float | None
    n_windows: int
    config_hash: str
    model: str
    horizons_s: tuple[int, ...] = HORIZONS_S
    errors_ft: np.ndarray | None = field(default=None, repr=False)
    window_ids: list[str] = field(default_factory=list, repr=False)
    wall_time_s: float = field(default=0.0, compare=False)

    def to_dict(self) -> dict:
        # wall time is deliberately left out so reports compare bit-for-bit
        return {
            "model": self.model,
            "config_hash": self.config_hash,
            "n_windows": self.n_windows,
            "horizons_s": list(self.horizons_s),
            "rmse_m": self.rmse_m,
            "rmse_ft": self.rmse_ft,
            "nll": self.nll,
            "maneuver_accuracy": self.accuracy,
        }

    def write(self, path: str | Path, dump_errors: bool = True) -> None:
        """JSON report at ``path`` plus ``<stem>.csv`` (horizon, rmse_m) and per-window errors."""
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        with open(path.with_suffix(".csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["horizon", "rmse_m"])
            for h, r in zip(self.horizons_s, self.rmse_m):
                w.writerow([h, repr(r)])
        if dump_errors and self.errors_ft is not None:
            with open(path.with_name(path.stem + "_errors.csv"), "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["window_id"] + [f"err_ft_{h}s" for h in self.horizons_s])
                for wid, row in zip(self.window_ids, self.errors_ft):
                    w.writerow([wid] + [repr(float(v)) for v in row])


def rmse_from_errors(errors_ft: np.ndarray) -> tuple[list[float], list[float]]:
    """Per-horizon RMSE over windows of Euclidean errors given in feet."""
    e = np.asarray(errors_ft, dtype=np.float64)
    ft = np.sqrt(np.mean(e * e, axis=0))
    return [float(v * FT_TO_M) for v in ft], [float(v) for v in ft]


def horizon_errors(forecasts: np.ndarray, truths: np.ndarray, hz: float) -> np.ndarray:
    """(n, 5) Euclidean errors (feet) at the whole-second horizons."""
    idx = horizon_indices(hz)
    d = np.asarray(forecasts)[:, idx, :] - np.asarray(truths)[:, idx, :]
    return np.hypot(d[..., 0], d[..., 1])


def _working_hz(cfg) -> float:
    return 10.0 / cfg.data.rate


def evaluate(ckpt: Checkpoint, windows: Sequence[Window], batch_size: int = 256,
             weighted: bool = False) -> MetricsReport:
    """Point-forecast RMSE per horizon, mixture NLL and maneuver accuracy."""
    windows = list(windows)
    if not windows:
        raise EvaluationError("empty test set")
    start = time.perf_counter()
    preds = []
    for s in range(0, len(windows), batch_size):
        chunk = windows[s:s + batch_size]
        preds.extend(predict_batch(ckpt.model, collate(chunk, ckpt.pipeline, ckpt.config.model.grid)))
    forecasts = np.stack([point_forecast(p, weighted=weighted) for p in preds])
    truths = np.stack([w.future for w in windows])
    errors = horizon_errors(forecasts, truths, _working_hz(ckpt.config))
    rmse_m, rmse_ft = rmse_from_errors(errors)
    nll = float(np.mean([mixture_nll(p, w.future) for p, w in zip(preds, windows)]))
    labelled = [(p, w) for p, w in zip(preds, windows) if w.label is not None]
    acc = (float(np.mean([int(np.argmax(p.maneuver_probs)) == MANEUVERS.index(w.label) for p, w in labelled]))
           if labelled else None)
    return MetricsReport(rmse_m, rmse_ft, nll, acc, len(windows), ckpt.config_hash, ckpt.config.variant,
                         errors_ft=errors, window_ids=[w.window_id for w in windows],
                         wall_time_s=time.perf_counter() - start)


def cv_baseline(window: Window, n_future: int | None = None) -> np.ndarray:
    """Extrapolate the ego's last observed per-frame velocity over the horizon."""
    hist = window.states[0, :, :2]
    if len(hist) < 2 or window.padded[0, -2]:
        raise EvaluationError("constant-velocity baseline needs two observed history frames")
    n = len(window.future) if n_future is None else n_future
    vel = hist[-1] - hist[-2]
    return hist[-1] + np.arange(1, n + 1)[:, None] * vel


def evaluate_forecaster(forecaster: Callable[[Window], np.ndarray], windows: Sequence[Window],
                        hz: float, name: str, config_hash: str = "") -> MetricsReport:
    windows = list(windows)
    if not windows:
        raise EvaluationError("empty test set")
    start = time.perf_counter()
    forecasts = np.stack([forecaster(w) for w in windows])
    truths = np.stack([w.future for w in windows])
    errors = horizon_errors(forecasts, truths, hz)
    rmse_m, rmse_ft = rmse_from_errors(errors)
    return MetricsReport(rmse_m, rmse_ft, None, None, len(windows), config_hash, name,
                         errors_ft=errors, window_ids=[w.window_id for w in windows],
                         wall_time_s=time.perf_counter() - start)


def evaluate_cv(windows: Sequence[Window], hz: float = 5.0) -> MetricsReport:
    return evaluate_forecaster(cv_baseline, windows, hz, "CV")


def plot_rmse(reports: dict[str, MetricsReport], path: str | Path) -> None:
    """RMSE-vs-horizon curves as SVG (needs matplotlib)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, rep in reports.items():
        ax.plot(rep.horizons_s, rep.rmse_m, marker="o", label=name)
    ax.set_xlabel("horizon (s)")
    ax.set_ylabel("RMSE (m)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def nan_to_none(x: float | None) -> float | None:
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else x
