"""Exception types shared across the package.

Every error carries a short ``category`` string; the CLI prints it as the
machine-parsable first token of its one-line failure message.
"""

from __future__ import annotations

import numpy as np


class LesionForgeError(Exception):
    category = "error"


class ConfigError(LesionForgeError):
    category = "config"


class ShapeError(LesionForgeError, ValueError):
    category = "shape"


class NumericError(LesionForgeError, ArithmeticError):
    category = "numeric"


class UsageError(LesionForgeError, RuntimeError):
    category = "usage"


class StratificationError(LesionForgeError):
    category = "stratification"


class EmptyInputError(LesionForgeError, ValueError):
    category = "empty-input"


class UndefinedMetricError(LesionForgeError, ValueError):
    category = "undefined-metric"


class LeakageError(LesionForgeError):
    category = "leakage"


class MissingInputsError(LesionForgeError, FileNotFoundError):
    category = "missing-inputs"


class RegionOverflowError(LesionForgeError):
    """Region growing exceeded its area budget; ``partial`` holds the mask so far."""

    category = "overflow"

    def __init__(self, message: str, partial: np.ndarray):
        super().__init__(message)
        self.partial = partial
