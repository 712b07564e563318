"""Exception types shared across the package."""


class MtalError(Exception):
    """Base class for package-specific errors."""


class DimensionError(MtalError, ValueError):
    """Array shapes do not conform for the requested operation."""


class ContractViolationError(MtalError, ValueError):
    """An argument violates a documented precondition."""


class NumericError(MtalError, ArithmeticError):
    """A computation produced or encountered non-finite values."""


class UndefinedMetricError(MtalError, ArithmeticError):
    """A metric has no defined value on the given inputs (e.g. empty after exclusions)."""


class ConfigurationError(MtalError, ValueError):
    """Invalid or mutually inconsistent configuration."""


class CheckpointFormatError(MtalError, ValueError):
    """Bytes do not parse as an MTAL1 checkpoint."""


class CheckpointIntegrityError(MtalError, ValueError):
    """Checkpoint parsed but is truncated or inconsistent with its header."""


class TrainingAbortError(MtalError, RuntimeError):
    """Training aborted mid-run, typically on a non-finite loss."""
