"""Exception types shared across the package.

The command line maps these onto process exit codes: usage errors exit
with 2, data/format errors with 3, numeric errors with 4.
"""


class UsageError(ValueError):
    """Caller misuse: bad configuration values, empty inputs, missing files."""


class DataFormatError(ValueError):
    """Malformed or inconsistent data: feature files, manifests, result logs."""


class NumericError(ArithmeticError):
    """Non-finite values or impossible arithmetic (division by zero accuracy)."""
