"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Raised when inputs, files, or parameters violate a documented invariant."""


class StageFailure(RuntimeError):
    """Raised when a pipeline stage fails after validation has passed."""
