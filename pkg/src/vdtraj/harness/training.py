"""End-to-end training and checkpoints."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..data import split
from ..errors import ConfigError, SplitError, TrainingError
from ..numerics import Adam, Tape, backward, no_record
from ..predictor import (
    Batch, FeaturePipeline, TrajectoryModel, collate, forward, loss_fn, mixture_loss,
)
from ..preprocess import Window, apply_minmax, fit_minmax, fit_zca, window_states
from ..ssae import SsaeModel, pretrain
from .config import VARIANTS, ExperimentConfig, variant_columns
from .datasets import load_split

log = logging.getLogger(__name__)
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    config: ExperimentConfig
    model: TrajectoryModel
    pipeline: FeaturePipeline
    history: list[dict] = field(default_factory=list)

    @property
    def config_hash(self) -> str:
        return self.config.hash()

    def to_dict(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "config_hash": self.config_hash,
            "seed": self.model.seed,
            "pipeline": self.pipeline.to_dict(),
            "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                       for k, v in self.model.state_dict().items()},
            "history": self.history,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def from_dict(cls, d: dict) -> "Checkpoint":
        if d.get("version") != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {d.get('version')}")
        cfg = ExperimentConfig.from_dict(d["config"])
        model = build_model(cfg, seed=int(d["seed"]))
        model.load_state_dict({k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"])
                               for k, v in d["params"].items()})
        return cls(cfg, model, FeaturePipeline.from_dict(d["pipeline"]), d.get("history", []))

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _dtype(name: str):
    if name not in ("float64", "float32"):
        raise ConfigError(f"dtype must be float64 or float32, got {name!r}")
    return np.dtype(name).type


def build_model(cfg: ExperimentConfig, seed: int, ssae: SsaeModel | None = None) -> TrajectoryModel:
    return TrajectoryModel(cfg.model, seed=seed, ssae=ssae, dtype=_dtype(cfg.train.dtype))


def fit_pipeline(cfg: ExperimentConfig, train_windows: Sequence[Window]) -> FeaturePipeline:
    """Min-Max (and, for the descriptor variant, ZCA) fitted on training windows only."""
    cols = variant_columns(cfg.variant)
    states = window_states(train_windows)[:, list(cols)]
    mm = fit_minmax(states)
    zca = fit_zca(apply_minmax(states, mm), cfg.zca_eps) if VARIANTS[cfg.variant][1] else None
    return FeaturePipeline(cols, mm, zca)


def pretrain_descriptor(cfg: ExperimentConfig, pipeline: FeaturePipeline,
                        train_windows: Sequence[Window], seed: int) -> SsaeModel:
    data = pipeline.transform(window_states(train_windows))
    result = pretrain(data, cfg.ssae, seed=seed)
    return result.model


def _cast_batch(batch: Batch, dtype) -> Batch:
    batch.inputs = batch.inputs.astype(dtype)
    batch.future = batch.future.astype(dtype)
    return batch


def scheduled_lr(tc, epoch: int) -> float:
    """Learning rate for ``epoch``: constant, or cosine-annealed to ``lr_min``."""
    if tc.lr_schedule == "constant":
        return tc.lr
    if tc.lr_schedule == "cosine":
        frac = epoch / max(tc.epochs - 1, 1)
        return tc.lr_min + 0.5 * (tc.lr - tc.lr_min) * (1.0 + math.cos(math.pi * frac))
    raise ConfigError(f"unknown lr schedule {tc.lr_schedule!r}")


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Rescale ``grads`` in place so their joint L2 norm is at most ``max_norm``."""
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm:
        for g in grads.values():
            g *= max_norm / norm
    return norm


def batch_loss(model: TrajectoryModel, batch: Batch, mode: str) -> float:
    with no_record():
        return float(loss_fn(mode)(forward(model, batch), batch).data)


def _validation_split(windows: list[Window], fraction: float, seed: int):
    if fraction <= 0:
        return windows, []
    try:
        s = split(windows, 1.0 - fraction, seed)
    except SplitError:
        return windows, []
    return s.train, s.test


def train_on(cfg: ExperimentConfig, train_windows: Sequence[Window], seed: int | None = None,
             ssae: SsaeModel | None = None, progress=None) -> Checkpoint:
    """Fit preprocessing, pretrain the SSAE if needed, then train end to end with Adam."""
    tc = cfg.train
    seed = tc.seed if seed is None else seed
    dtype = _dtype(tc.dtype)
    windows = list(train_windows)
    if not windows:
        raise TrainingError("no training windows")
    fit_w, val_w = _validation_split(windows, tc.val_fraction, seed)
    pipeline = fit_pipeline(cfg, windows)
    if cfg.model.use_ssae and ssae is None and tc.pretrain_ssae:
        ssae = pretrain_descriptor(cfg, pipeline, windows, seed)
    model = build_model(cfg, seed, ssae)
    if cfg.model.normalize_outputs:
        model.fit_output_norm(np.stack([w.future for w in windows]))
    if ssae is not None and dtype is not np.float64:
        for t in model.ssae.params().values():
            t.data = t.data.astype(dtype)
    params = model.params(trainable_only=True)
    opt = Adam(params, lr=tc.lr)
    step_loss = loss_fn(tc.loss_mode)
    rng = np.random.default_rng(seed + 1000)
    grid = cfg.model.grid
    val_batch = _cast_batch(collate(val_w, pipeline, grid), dtype) if val_w else None

    history: list[dict] = []
    best_val, best_state, stale = math.inf, None, 0
    for epoch in range(tc.epochs):
        opt.state.lr = scheduled_lr(tc, epoch)
        order = rng.permutation(len(fit_w))
        total, count = 0.0, 0
        for bi, s in enumerate(range(0, len(order), tc.batch_size)):
            batch = _cast_batch(collate([fit_w[i] for i in order[s:s + tc.batch_size]], pipeline, grid), dtype)
            with Tape() as tape:
                loss = step_loss(forward(model, batch), batch)
            val = float(loss.data)
            if not math.isfinite(val):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi}")
            grads = backward(tape, loss, leaves=params.values())
            step = {name: grads[p] for name, p in params.items()}
            if tc.clip_norm:
                clip_global_norm(step, tc.clip_norm)
            opt.step(step)
            total += val * batch.size
            count += batch.size
        rec = {"epoch": epoch, "train_loss": total / count}
        if val_batch is not None:
            rec["val_loss"] = batch_loss(model, val_batch, tc.loss_mode)
        history.append(rec)
        if progress is not None:
            progress(rec)
        log.debug("epoch %d %s", epoch, rec)
        if val_batch is not None and tc.patience:
            if rec["val_loss"] < best_val:
                best_val, best_state, stale = rec["val_loss"], model.state_dict(), 0
            else:
                stale += 1
                if stale >= tc.patience:
                    break
    if best_state is not None:
        model.load_state_dict(best_state)
    return Checkpoint(cfg, model, pipeline, history)


def train(cfg: ExperimentConfig, seed: int | None = None, progress=None) -> Checkpoint:
    """Load the configured data, split 80/20 by vehicle, train on the training side."""
    data_split = load_split(cfg.data, cfg.model.grid)
    return train_on(cfg, data_split.train, seed=seed, progress=progress)


def train_loss_on(ckpt: Checkpoint, windows: Sequence[Window]) -> float:
    """Mixture NLL (batch mean) of ``windows`` under a checkpoint."""
    batch = collate(list(windows), ckpt.pipeline, ckpt.config.model.grid)
    with no_record():
        return float(mixture_loss(forward(ckpt.model, batch), batch).data)
