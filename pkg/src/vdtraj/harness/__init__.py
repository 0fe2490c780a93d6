"""Experiment orchestration: training, evaluation, baselines and ablations."""

from .ablation import VARIANT_ORDER, AblationResult, ablate
from .config import VARIANTS, DataConfig, ExperimentConfig, TrainConfig, variant_columns
from .datasets import load_split, load_windows, read_windows, save_windows, select_windows, windows_hash
from .evaluation import (
    FT_TO_M, HORIZONS_S, MetricsReport, cv_baseline, evaluate, evaluate_cv, evaluate_forecaster,
    horizon_errors, horizon_indices, plot_rmse, rmse_from_errors,
)
from .training import Checkpoint, build_model, fit_pipeline, train, train_on

__all__ = [
    "VARIANT_ORDER", "AblationResult", "ablate", "VARIANTS", "DataConfig", "ExperimentConfig",
    "TrainConfig", "variant_columns", "load_split", "load_windows", "read_windows", "save_windows",
    "select_windows", "windows_hash", "FT_TO_M", "HORIZONS_S", "MetricsReport", "cv_baseline",
    "evaluate", "evaluate_cv", "evaluate_forecaster", "horizon_errors", "horizon_indices",
    "plot_rmse", "rmse_from_errors", "Checkpoint", "build_model", "fit_pipeline", "train", "train_on",
]
