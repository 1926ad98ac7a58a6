"""Exception types shared across the package.

Every error raised on a contract violation derives from DuctwaveError so
callers (and the CLI) can distinguish tool failures from programming bugs.
"""


class DuctwaveError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(DuctwaveError, ValueError):
    """An argument violates a documented precondition."""


class ConfigurationError(DuctwaveError, ValueError):
    """A configuration object is internally inconsistent."""


class DomainCoverageError(DuctwaveError, ValueError):
    """A refractivity profile does not cover the solver's vertical domain."""


class NumericalError(DuctwaveError, ArithmeticError):
    """A numeric routine left its validity envelope (NaN, negative eigenvalue...)."""


class DataError(DuctwaveError, ValueError):
    """Stored data violates its schema (shape, dtype, value range)."""


class CorruptionError(DataError):
    """A stored artifact is truncated or fails its checksum."""


class VersionError(DataError):
    """A stored artifact declares an unsupported schema version."""


class StageDependencyError(DuctwaveError, RuntimeError):
    """A pipeline stage was started before the stages it consumes."""


class CompletenessError(DuctwaveError, RuntimeError):
    """An evaluation is missing required predictions or samples."""
