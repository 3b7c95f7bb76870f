"""Exception hierarchy shared across the codec.

The CLI maps these onto exit codes: usage errors 1, environment errors 2,
data errors 3, decode errors 4.
"""


class BgopError(Exception):
    """Base class for all codec errors."""


class ConfigurationError(BgopError):
    """Invalid configuration or contract violation at construction time."""


class ShapeError(ConfigurationError):
    """Tensor shape does not satisfy an operation's precondition."""


class DataError(BgopError):
    """Dataset ingestion or sample extraction failure."""


class DecodeError(BgopError):
    """Bitstream or payload cannot be decoded."""

    def __init__(self, message, unit_index=None):
        super().__init__(message)
        self.unit_index = unit_index


class EnvironmentUnavailableError(BgopError):
    """A required external binary or backend is missing on this host."""


class TrainingError(BgopError):
    """Training contract violation, e.g. a parameter group with no gradient."""
