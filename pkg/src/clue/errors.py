"""Exception hierarchy shared by the library and the command line."""


class ClueError(Exception):
    """Base class for every error raised on purpose by this package."""

    kind = "error"


class InputError(ClueError, OSError):
    """A referenced file is missing, unreadable or not in the expected container format."""

    kind = "io"


class SchemaError(ClueError, ValueError):
    """Content was readable but violates a declared schema or invariant."""

    kind = "schema"


class NumericError(ClueError, ArithmeticError):
    """A numerical procedure diverged or produced non-finite values."""

    kind = "numeric"
