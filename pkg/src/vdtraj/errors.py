"""Exception types shared across the package."""


class VdtrajError(Exception):
    pass


class DimensionError(VdtrajError, ValueError):
    """Operand shapes are incompatible."""


class NumericError(VdtrajError, ArithmeticError):
    """A NaN/Inf or an out-of-range value reached a place that cannot absorb it."""


class UsageError(VdtrajError, RuntimeError):
    pass


class ConfigError(VdtrajError, ValueError):
    pass


class FormatError(VdtrajError, ValueError):
    """Input file does not follow the expected layout."""


class InsufficientHistoryError(VdtrajError, ValueError):
    pass


class TrainingError(VdtrajError, RuntimeError):
    pass


class SplitError(VdtrajError, ValueError):
    pass


class EvaluationError(VdtrajError, ValueError):
    pass
