"""Exception hierarchy shared by every welane module.

Every error a parser or numerical routine raises derives from
:class:`WelaneError`, so callers (and the CLI) can map any library failure to
a data-error exit code with a single ``except``.
"""


class WelaneError(Exception):
    """Base class for all library errors."""


class ParseError(WelaneError, ValueError):
    """Malformed file content.

    ``offset`` is a byte offset for binary formats, ``line`` a 1-based line
    number for text formats; whichever does not apply is ``None``.
    """

    def __init__(self, message, offset=None, line=None):
        where = []
        if offset is not None:
            where.append(f"byte {offset}")
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.offset = offset
        self.line = line


class TruncationError(ParseError):
    """Payload shorter than its header declares."""


class FormatError(WelaneError, ValueError):
    """Wrong magic number or unsupported container layout."""


class ValidationError(WelaneError, ValueError):
    """Decoded values violate a data invariant (NaN, out-of-range, ...)."""


class IoError(WelaneError, OSError):
    """File could not be opened or written."""


class ConfigError(WelaneError, ValueError):
    """Invalid parameters or incompatible argument shapes."""


class NumericsError(WelaneError, ArithmeticError):
    """A computation produced non-finite intermediates."""


class UndefinedOverlap(WelaneError, ValueError):
    """Two lanes share no valid row, so their Line-IoU is undefined."""


class MetricError(WelaneError, ValueError):
    """Inputs cannot be scored under the requested metric."""
