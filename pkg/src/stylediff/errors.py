"""Exception hierarchy shared across the package.

Every error raised on a documented failure path derives from
:class:`StyleDiffError`, so callers (and the CLI) can distinguish our
categorized failures from programming errors.
"""


class StyleDiffError(Exception):
    """Base class for all package errors."""


class ValidationError(StyleDiffError, ValueError):
    """Input data violates a precondition (shape, finiteness, range)."""


class ConfigError(StyleDiffError, ValueError):
    """A configuration value is out of range or inconsistent."""


class TransformError(StyleDiffError, ValueError):
    """A series/image transform cannot be applied to this input."""


class GatingError(StyleDiffError, ValueError):
    """A guided denoising step was requested at a boundary time step."""


class InsufficientDataError(StyleDiffError, ValueError):
    """A statistical routine received fewer samples than it needs."""


class ParseError(StyleDiffError, ValueError):
    """A delimited text file contains a malformed cell."""

    def __init__(self, message: str, row: int | None = None, column: str | int | None = None):
        super().__init__(message)
        self.row = row
        self.column = column


class FormatError(StyleDiffError, ValueError):
    """A binary container is malformed."""


class MagicError(FormatError):
    """Container does not start with the expected magic bytes."""


class VersionError(FormatError):
    """Container declares an unsupported format version."""


class ChecksumError(FormatError):
    """Container payload does not match its CRC32 trailer."""
