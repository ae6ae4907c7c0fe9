"""Exception types shared across the package."""


class DonnsegError(Exception):
    """Base class for errors raised by donnseg."""


class GridMismatchError(DonnsegError, ValueError):
    """Operands live on different grids or have inconsistent shapes."""


class ConfigError(DonnsegError, ValueError):
    """A run configuration is invalid or incomplete."""


class DatasetError(DonnsegError, ValueError):
    """A dataset or manifest failed validation."""


class CheckpointError(DonnsegError, ValueError):
    """A checkpoint file is malformed or inconsistent with its header."""
