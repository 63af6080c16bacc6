"""Exception types shared across the package, mapped to CLI exit codes."""

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class AudiosegError(Exception):
    """Base class for errors raised by this package."""

    exit_code = EXIT_DATA


class DimensionError(AudiosegError):
    """Tensor, matrix or sequence shapes do not conform."""


class DataError(AudiosegError):
    """Malformed or unusable input (files, datasets, parameters)."""


class DegenerateDataError(DataError):
    """Input carries no usable signal (e.g. zero variance everywhere)."""


class ConfigError(AudiosegError):
    """Invalid run configuration."""


class NumericError(AudiosegError):
    """Non-finite values or diverging computations."""

    exit_code = EXIT_NUMERIC
