"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array dimensions do not line up."""


class NumericInputError(ValueError):
    """Input contains NaN or infinite values."""


class StateError(RuntimeError):
    """An operation was called before its prerequisite (e.g. backward before forward)."""


class DataError(ValueError):
    """Training or evaluation data is empty or otherwise unusable."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class ConvergenceError(RuntimeError):
    """Solver stopped making progress before satisfying its optimality conditions."""

    def __init__(self, message, gap=None, iterations=None):
        super().__init__(message)
        self.gap = gap
        self.iterations = iterations


class SchemaError(ValueError):
    """CSV header or bundle contents do not match the expected schema."""


class RowError(ValueError):
    """Too many malformed rows in an input file."""
