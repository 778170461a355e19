"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration problems exit with 2,
data/file problems with 3, numerical failures with 4.
"""


class NrmStreamError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(NrmStreamError):
    """Invalid configuration file, key, or value."""


class DataError(NrmStreamError):
    """Malformed corpus, labels, or other input data."""


class CheckpointError(DataError):
    """Base class for checkpoint container problems."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written by an unknown format version."""


class CheckpointTruncatedError(CheckpointError):
    """Checkpoint file ends before the declared payload does."""


class CheckpointChecksumError(CheckpointError):
    """Checkpoint payload does not match its trailing checksum."""


class NumericalError(NrmStreamError):
    """A numerical routine failed to converge or produced invalid values."""


class ConvergenceError(NumericalError):
    """Iterative optimizer or sampler hit its iteration cap.

    Carries the last iterate so callers can log a useful diagnostic.
    """

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class LedgerError(NumericalError):
    """Stored per-observation contributions disagree with global statistics."""
