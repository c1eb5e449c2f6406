"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Raised when an input violates a documented precondition."""


class ProtocolError(ValidationError):
    """Raised when an evaluation request would break the train/test split protocol."""
