"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes (config 2, data 3, numerical 4);
the HTTP service maps them onto status codes.
"""


class BreathAuthError(Exception):
    """Base class for all package errors."""


class ConfigError(BreathAuthError):
    """Invalid configuration, arguments, or unsupported operation."""


class DataError(BreathAuthError):
    """Malformed, missing, or out-of-contract data."""


class NumericalError(BreathAuthError):
    """Non-finite values or numerically unusable state."""
