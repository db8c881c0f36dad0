"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError -> 3, NumericError -> 4.
"""


class MvdiError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(MvdiError):
    """Invalid or inconsistent configuration."""


class DataError(MvdiError):
    """Malformed or inconsistent input data (files, manifests, sidecars)."""


class NumericError(MvdiError):
    """Non-finite values or numerically unusable state encountered."""
