from __future__ import annotations


class LncaError(Exception):
    """Base error. `exit_code` and `kind` feed the CLI's one-line error report."""

    exit_code = 1
    kind = "runtime"


class ConfigError(LncaError, ValueError):
    exit_code = 2
    kind = "config"


class CheckpointError(LncaError):
    exit_code = 3
    kind = "checkpoint"


class ByteBudgetExceeded(LncaError, MemoryError):
    exit_code = 4
    kind = "byte_budget"

    def __init__(self, needed: int, budget: int):
        super().__init__(f"live tensor bytes {needed} exceed the byte budget {budget}")
        self.needed = needed
        self.budget = budget


class ShapeError(LncaError, ValueError):
    kind = "shape"


class InvalidArgument(LncaError, ValueError):
    kind = "argument"


class NonFiniteError(LncaError, FloatingPointError):
    kind = "non_finite"


class NormalizationError(LncaError, RuntimeError):
    kind = "normalization"


class GradientError(LncaError, RuntimeError):
    kind = "gradient"


class EmptyPoolError(LncaError, RuntimeError):
    kind = "empty_pool"


class FrozenParameterError(LncaError, RuntimeError):
    kind = "frozen"


class DatasetError(LncaError):
    kind = "dataset"
