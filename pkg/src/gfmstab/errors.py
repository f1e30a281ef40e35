"""Exception hierarchy shared by the analysis modules.

The CLI maps :class:`InvalidInput` to exit code 2 and
:class:`NumericalFailure` to exit code 3.
"""


class GfmError(Exception):
    """Base class for all package errors."""


class InvalidInput(GfmError, ValueError):
    """Malformed parameters, configs or model dimensions."""


class NumericalFailure(GfmError, ArithmeticError):
    """A numerical procedure could not deliver a trustworthy result."""
