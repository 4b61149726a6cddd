"""Exception types raised across the package."""


class DtgofError(Exception):
    """Base class for all package errors."""


class ValidationError(DtgofError, ValueError):
    """Input data or parameters violate a documented precondition."""


class EmptySample(ValidationError):
    """No observation survived truncation."""


class NumericalError(DtgofError, ArithmeticError):
    """A numerical routine failed to produce a trustworthy result."""


class NoRoot(NumericalError):
    """The estimating equation has no root inside the parameter space."""


class BoundaryHit(NumericalError):
    """The estimating equation root lies on the edge of the parameter space."""


class FactorizationError(NumericalError):
    """Cholesky factorization failed even after the maximum jitter."""
