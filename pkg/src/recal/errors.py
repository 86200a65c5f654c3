"""Exception taxonomy shared by the library and the CLI exit-code mapping."""


class RecalError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(RecalError):
    """Invalid configuration value, unknown key, or inconsistent options."""


class DataError(RecalError):
    """Bad or missing input data: file format violations, truncation,
    dimension mismatches between artifacts, missing group labels."""


class NumericError(RecalError):
    """Numerical failure during training (non-finite loss or gradient)."""
