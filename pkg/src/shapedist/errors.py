"""Exception hierarchy shared by the library and the command-line front end."""


class ShapeDistError(Exception):
    """Base class for all errors raised by :mod:`shapedist`."""

    exit_code = 1


class DataError(ShapeDistError, ValueError):
    """Malformed, degenerate or dimensionally inconsistent input data."""

    exit_code = 3


class InsufficientSamplesError(DataError):
    """Too few stimuli for the requested estimator."""


class NumericalError(ShapeDistError, ArithmeticError):
    """A numerical routine failed to converge or produced non-finite output."""

    exit_code = 4


class InfeasibleError(ShapeDistError):
    """A requested configuration (bias cap, ground-truth target) cannot be met."""

    exit_code = 5
