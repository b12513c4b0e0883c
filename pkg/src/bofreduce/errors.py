"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration problems exit 2, bad input
data exits 3, broken internal invariants exit 4.
"""

from __future__ import annotations


class BofError(Exception):
    """Base class for all package errors."""


class ConfigError(BofError, ValueError):
    """Invalid parameters or configuration."""


class DataError(BofError, ValueError):
    """Input data that violates a documented contract."""


class FormatError(DataError):
    """Malformed binary or text file.

    Attributes:
        offset: byte offset (binary formats) or line number (text formats)
            at which the problem was detected.
    """

    def __init__(self, message: str, offset: int | None = None, path=None):
        self.offset = offset
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"offset {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class InvariantError(BofError, AssertionError):
    """An internal consistency check failed."""
