"""Exception types shared across the package."""

from __future__ import annotations


class ParinlaError(Exception):
    """Base class for all errors raised by this package."""


class BudgetError(ParinlaError, ValueError):
    """Malformed or non-positive thread budget."""


class StructureError(ParinlaError, ValueError):
    """Sparse matrix or graph violates a structural requirement."""


class DimensionMismatch(ParinlaError, ValueError):
    """Vector or matrix dimensions do not line up."""


class NotPositiveDefinite(ParinlaError):
    """Cholesky pivot failed; the matrix is not numerically SPD.

    The ``column`` attribute holds the offending column in the original
    (unpermuted) ordering.
    """

    def __init__(self, column: int):
        self.column = int(column)
        super().__init__(f"non-positive pivot at column {self.column}")


class InnerDivergence(ParinlaError):
    """The conditional-mode Newton iteration failed to converge."""

    def __init__(self, theta, detail: str = ""):
        self.theta = theta
        msg = f"inner optimization did not converge at theta={theta}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class LineSearchFailure(ParinlaError):
    """No step along the search direction improved the objective."""

    def __init__(self, theta):
        self.theta = theta
        super().__init__(f"line search failed at theta={theta}")


class RobustFitError(ParinlaError, ValueError):
    """Degenerate design for the robust quadratic fit."""


class BatchError(ParinlaError):
    """A task in a parallel batch raised; ``slot`` is its position."""

    def __init__(self, slot: int, cause: BaseException):
        self.slot = int(slot)
        self.task_error = cause
        super().__init__(f"task in slot {self.slot} failed: {cause!r}")


class EvaluationError(ParinlaError):
    """An objective evaluation inside a parallel batch failed.

    Carries the hyperparameter point that failed and the slot it occupied.
    """

    def __init__(self, theta, slot: int, cause: BaseException):
        self.theta = theta
        self.slot = int(slot)
        super().__init__(f"objective evaluation failed at theta={theta}: {cause!r}")


class ConfigError(ParinlaError, ValueError):
    """Invalid run configuration or model file; ``key`` names the field."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")
