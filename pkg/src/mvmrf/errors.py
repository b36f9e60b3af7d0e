"""Exception types shared across the package."""


class SaturationError(RuntimeError):
    """Rejection sampler gave up before finding a valid draw."""

    def __init__(self, attempts: int, message: str | None = None):
        self.attempts = attempts
        super().__init__(message or f"no valid draw after {attempts} attempts")


class NumericalDegeneracyError(ArithmeticError):
    """A conditional draw is undefined for the current state (e.g. zero residual sum)."""


class DataError(ValueError):
    """Input data failed validation."""


class ConfigError(ValueError):
    """Run configuration failed validation."""


class ArchiveFormatError(ValueError):
    """Archive file is truncated, corrupted, or of an unknown version."""
