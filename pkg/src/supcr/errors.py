"""Exception hierarchy shared across the package."""


class SupCRError(Exception):
    """Base class for all package errors."""


class ConfigError(SupCRError, ValueError):
    """Invalid configuration, dimensions or sizes."""


class BatchSizeError(ConfigError):
    """A two-view batch needs at least two source samples."""


class DomainError(SupCRError, ValueError):
    """Input outside the mathematical domain of an operation."""


class NumericError(SupCRError, ArithmeticError):
    """Non-finite values encountered in a numeric path."""


class TrainingError(SupCRError, RuntimeError):
    """Training diverged; ``step`` holds the failing optimizer step."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step
