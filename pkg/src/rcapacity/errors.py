"""Exception hierarchy shared by all modules.

Each class carries the CLI exit code it maps to: 2 for validation,
3 for non-convergence, 4 for sizing/budget problems.
"""


class RCapacityError(Exception):
    exit_code = 1


class ValidationError(RCapacityError, ValueError):
    exit_code = 2


class SizingError(RCapacityError):
    """Requested domain or enumeration exceeds the configured budget."""

    exit_code = 4


class BudgetExceeded(SizingError):
    pass


class NonConvergence(RCapacityError):
    """Solver hit ``max_iter``; the best iterate is attached."""

    exit_code = 3

    def __init__(self, message, potential=None, estimate=None):
        super().__init__(message)
        self.potential = potential
        self.estimate = estimate


class UnsupportedExponent(ValidationError):
    pass


class UnsupportedDomain(ValidationError):
    pass


class InfeasiblePotential(ValidationError):
    pass


class DegenerateMeasure(ValidationError):
    pass


class NotBoundary(ValidationError):
    pass


class OutOfRange(ValidationError):
    pass


class MissingLambda(ValidationError):
    pass


class GeometryError(ValidationError):
    pass


class DegenerateTilt(ValidationError):
    pass


class InsufficientHits(RCapacityError):
    exit_code = 3
