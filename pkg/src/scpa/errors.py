"""Exception types shared across the toolkit.

``DataError`` covers anything wrong with the *content* of inputs (shape
mismatches, out-of-range class IDs, unknown colors, infeasible specs).  I/O
problems surface as the builtin ``OSError`` family and are left alone.
"""


class ScpaError(Exception):
    """Base class for toolkit errors."""


class DataError(ScpaError, ValueError):
    """Input data failed validation."""
