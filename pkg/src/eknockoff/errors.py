"""Exception hierarchy shared by all modules.

The CLI maps :class:`InvalidInputError` to exit code 2 and
:class:`NumericalError` to exit code 3.
"""


class EKnockoffError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(EKnockoffError, ValueError):
    """Malformed, mis-shaped or out-of-range user input."""


class InsufficientDataError(InvalidInputError):
    """Too few observations for the requested operation."""


class UnsupportedStatisticError(InvalidInputError):
    """Operation is not defined for the given importance statistic."""


class NumericalError(EKnockoffError, ArithmeticError):
    """A factorization failed or a computation produced non-finite values."""
