"""Exception hierarchy shared across the package.

The CLI maps ConfigError to exit code 2 and NumericsError to exit code 3,
so library code should pick the right branch when raising.
"""


class PhononForgeError(Exception):
    """Base class for all package errors."""


class ConfigError(PhononForgeError):
    """Invalid configuration, parameter domain violation, or bad user input."""


class NumericsError(PhononForgeError):
    """A computation cannot be carried out at the requested accuracy."""


class TruncationError(NumericsError):
    """A Fock-space truncation leaves too much probability mass outside."""


class GridError(NumericsError):
    """A phase-space grid is too small for the state it should hold."""

    def __init__(self, message, suggested_half_width=None):
        super().__init__(message)
        self.suggested_half_width = suggested_half_width
