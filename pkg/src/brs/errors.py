"""Error types shared across the package.

The CLI maps these onto exit codes (config -> 2, numeric -> 3), so every
module raises one of the two below instead of bare ValueError when the
failure is user-visible.
"""


class ConfigError(ValueError):
    """Bad configuration: shape mismatches, invalid flags, malformed files."""


class NumericError(ArithmeticError):
    """Non-finite values or failed numeric operations during computation."""
