"""Exception hierarchy.

Every error raised by the toolkit derives from :class:`QBMORError` and carries
an ``exit_code`` used by the command-line driver.
"""


class QBMORError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 3


class DimensionError(QBMORError, ValueError):
    """Inconsistent matrix or tensor dimensions."""

    exit_code = 2


class StabilityError(QBMORError):
    """A matrix required to be Hurwitz is not.

    Parameters
    ----------
    message
        Human readable description.
    eigenvalue
        The offending eigenvalue (largest real part).
    """

    def __init__(self, message, eigenvalue=None):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class ConvergenceError(QBMORError):
    """An iteration stopped without meeting its tolerance."""

    def __init__(self, message, changes=None):
        super().__init__(message)
        self.changes = changes


class DivergenceError(QBMORError):
    """An iteration or a time integration blew up."""


class DomainError(QBMORError, ValueError):
    """Argument outside the domain where a formula is valid."""

    exit_code = 2


class NumericalError(QBMORError):
    """Generic numerical failure (non-finite values, rank deficiency, ...)."""


class FormatError(QBMORError):
    """Malformed or inconsistent file contents."""

    exit_code = 4
