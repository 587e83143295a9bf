"""Exception types shared across the package."""


class LiouvilleError(Exception):
    """Base class for all package errors."""


class ConstraintViolation(LiouvilleError, ValueError):
    """A phase point or tangent vector violates a manifold constraint."""


class ParameterError(LiouvilleError, ValueError):
    """System parameters are outside their admissible range."""


class UsageError(LiouvilleError, TypeError):
    """Operands are incompatible (e.g. fields on different spaces)."""


class PreconditionError(LiouvilleError, ValueError):
    """An operation was called outside its stated precondition."""


class ConstructionError(LiouvilleError, RuntimeError):
    """A displacement construction failed (e.g. a shift function has a
    critical point outside the allowed region)."""


class IntegrationFailure(LiouvilleError, RuntimeError):
    """Adaptive integration could not proceed; carries the last good state."""

    def __init__(self, message, last_good=None, t_reached=None):
        super().__init__(message)
        self.last_good = last_good
        self.t_reached = t_reached
