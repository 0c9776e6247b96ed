"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: UsageError -> 1, DataError -> 2,
NumericalError -> 3.
"""


class SkewrecError(Exception):
    """Base class for all package errors."""


class UsageError(SkewrecError):
    """Bad invocation: unknown config keys, invalid flag combinations."""


class DataError(SkewrecError):
    """Malformed or inconsistent input data."""


class NumericalError(SkewrecError):
    """Numerical failure: Cholesky breakdown, NaN loss, singular covariance."""
