"""Exception hierarchy shared across the package."""


class WinNetError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(WinNetError):
    """Invalid hyperparameter, option, or file-level configuration."""


class ShapeError(WinNetError):
    """Tensor/array shape mismatch; message names the offending axes."""


class DataError(WinNetError):
    """Malformed input data (CSV parse failures, non-finite inputs)."""


class DivergenceError(WinNetError):
    """Training produced a non-finite loss or gradient."""
