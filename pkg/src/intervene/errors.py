"""Exception types shared across the package.

The CLI maps :class:`ValidationError` to exit code 1 and
:class:`NumericalError` to exit code 2.
"""


class InterveneError(Exception):
    """Base class for all package errors."""


class ValidationError(InterveneError, ValueError):
    """Bad input: malformed files, wrong shapes, invalid parameters."""


class NumericalError(InterveneError, ArithmeticError):
    """A numerical routine failed (e.g. Cholesky after jitter escalation)."""
