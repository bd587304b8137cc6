"""Exception types shared across the library.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericError -> 4.
"""


class FcxsError(Exception):
    """Base class for all library errors."""


class ConfigError(FcxsError, ValueError):
    """Invalid configuration, parameter value, or incompatible pairing."""


class ShapeError(ConfigError):
    """Tensor or mask dimensions do not match what an operation requires."""


class DataError(FcxsError, ValueError):
    """Dataset files are missing, malformed, or inconsistent."""


class NumericError(FcxsError, ArithmeticError):
    """A computation produced NaN/Inf or an optimizer step was fed one."""


class GraphStateError(FcxsError, RuntimeError):
    """Backward pass requested without a cached forward pass."""
