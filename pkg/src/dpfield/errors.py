"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: usage problems exit 1, data/format
problems exit 2 and numeric failures (NaN/Inf) exit 3.
"""


class DPFError(Exception):
    """Base class for all package errors."""


class ShapeError(DPFError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(DPFError, ValueError):
    """A precondition of an operation was violated."""


class FormatError(DPFError):
    """A file on disk is malformed, truncated or of a foreign type."""


class ConfigMismatchError(FormatError):
    """A checkpoint does not match the configuration it is loaded against."""

    def __init__(self, message, expected=None, found=None):
        if expected is not None or found is not None:
            message = f"{message}\n  expected: {expected}\n  found:    {found}"
        super().__init__(message)
        self.expected = expected
        self.found = found


class NumericError(DPFError, FloatingPointError):
    """A NaN or Inf appeared where finite values are required."""


EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3
