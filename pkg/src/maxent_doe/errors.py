"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes, so each class carries the category it
belongs to (usage, state or numeric).
"""


class MaxentDoeError(Exception):
    """Base class for all package errors."""

    exit_code = 4


class ParameterError(MaxentDoeError, ValueError):
    """An argument is outside its documented range."""

    exit_code = 2


class ConfigurationError(ParameterError):
    """A configuration leaves nothing to work with (e.g. an empty search grid)."""


class DataError(MaxentDoeError, ValueError):
    """Input data are malformed (non-finite values, unmatched records...)."""

    exit_code = 2


class StateError(MaxentDoeError):
    """A session is not in a state that allows the requested command."""

    exit_code = 3


class DegenerateGeometryError(MaxentDoeError):
    """Node positions span no volume where one is required."""


class RankError(MaxentDoeError):
    """Too few nodes around a query point for the requested consistency order."""

    def __init__(self, message, point=None, count=None, required=None):
        super().__init__(message)
        self.point = point
        self.count = count
        self.required = required


class ConvergenceError(MaxentDoeError):
    """Newton iterations for the Lagrange multipliers did not converge."""

    def __init__(self, message, point=None, residual_norm=None, iterations=None):
        super().__init__(message)
        self.point = point
        self.residual_norm = residual_norm
        self.iterations = iterations


class ConditioningError(MaxentDoeError):
    """A kernel matrix is too ill-conditioned to solve reliably."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class BoundaryProximityError(MaxentDoeError):
    """A finite-difference stencil would leave the domain."""


class DomainError(MaxentDoeError, ValueError):
    """A point lies outside the region where a function is defined."""


class QuadratureError(MaxentDoeError):
    """Adaptive quadrature failed to reach the requested accuracy."""
