"""Maneuver-conditioned vehicle trajectory forecasting with learned vehicle descriptors."""

from .errors import (
    ConfigError, DimensionError, EvaluationError, FormatError, InsufficientHistoryError,
    NumericError, SplitError, TrainingError, UsageError, VdtrajError,
)

__version__ = "0.1.0"
