"""Exception hierarchy shared by every pfnet module."""


class PFNetError(Exception):
    """Base class for all errors raised by pfnet."""


class ConfigError(PFNetError, ValueError):
    """Invalid or infeasible configuration."""


class PreconditionError(PFNetError, ValueError):
    """An argument falls outside the documented domain of an operation."""


class ShapeError(PFNetError, ValueError):
    """Array shapes do not agree."""


class InvariantError(PFNetError, ValueError):
    """A data structure violates one of its invariants."""


class CacheError(PFNetError, RuntimeError):
    """Backward was requested without a valid forward cache."""


class DataError(PFNetError, ValueError):
    """Malformed labels, trials or corpus entries."""


class WavFormatError(DataError):
    """A WAV file is not 16-bit PCM mono or its header is malformed."""


class DivergenceError(PFNetError, RuntimeError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, message, batch_index=None):
        super().__init__(message)
        self.batch_index = batch_index
