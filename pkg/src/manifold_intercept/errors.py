"""Base exceptions shared by every Manifold Intercept layer."""


class InterceptError(Exception):
    """Base exception for all pipeline errors."""

    pass


class ConfigError(InterceptError):
    """Raised for invalid configuration, malformed files or inconsistent artifacts."""

    pass


class NumericalError(InterceptError):
    """Raised when a numerical stage fails (solver, training, filter)."""

    def __init__(self, message: str, details: dict | None = None):
        super().__init__(message)
        self.details = details or {}
