"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Raised when arguments violate a documented precondition."""


class InvalidStateError(RuntimeError):
    """Raised when an object is used in a state that does not allow the call."""


class InvariantViolation(AssertionError):
    """Raised when an internal consistency check fails."""
