"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: usage errors are raised by argparse
itself (exit 2), ``DataError`` maps to exit 3 and ``NumericalError`` to 4.
"""


class DataError(ValueError):
    """Malformed, inconsistent or out-of-domain input data."""


class ParseError(DataError):
    """A delimited file could not be parsed; carries row/column coordinates."""

    def __init__(self, message: str, row: int | None = None, column: int | None = None):
        super().__init__(message)
        self.row = row
        self.column = column


class NumericalError(RuntimeError):
    """A numerical routine failed to produce a usable result."""
