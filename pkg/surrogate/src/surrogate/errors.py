"""Exception taxonomy for the surrogate trainer."""


class SurrogateError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(SurrogateError, ValueError):
    """An argument value violates a documented precondition."""


class ConfigurationError(SurrogateError, ValueError):
    """A configuration is internally inconsistent or out of scope."""


class CorruptionError(SurrogateError, ValueError):
    """A data file is structurally damaged or fails its checksum."""


class VersionError(SurrogateError, ValueError):
    """A data file's schema version is not supported."""


class TrainingError(SurrogateError, RuntimeError):
    """Training diverged; carries the last usable checkpoint path."""

    def __init__(self, message: str, last_good_checkpoint: str | None = None):
        super().__init__(message)
        self.last_good_checkpoint = last_good_checkpoint
