"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes: validation failures exit 1,
I/O and file-format problems exit 2, usage errors exit 64.
"""


class SplatstyleError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(SplatstyleError, ValueError):
    """Semantically invalid data: bad shapes, non-finite values, ranges."""


class FormatError(SplatstyleError, ValueError):
    """Malformed or unsupported file content (JSON, PLY, binary headers)."""
