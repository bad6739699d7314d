"""Exception hierarchy shared by every radtex module.

The CLI maps these onto exit codes, so each family stays distinct:
format problems (exit 2) versus validation/domain problems (exit 3).
"""


class RadtexError(Exception):
    pass


class DomainError(RadtexError, ValueError):
    """An input lies outside the mathematical domain of an operation."""


class ConfigurationError(RadtexError, ValueError):
    """A parameter (bucket resolution, grid size, bit depth, ...) is invalid."""


class ValidationError(RadtexError, ValueError):
    """Scene, patch or camera geometry failed validation."""


class FormatError(RadtexError):
    """A file or byte stream could not be decoded."""


class BadMagicError(FormatError):
    pass


class VersionMismatchError(FormatError):
    pass


class TruncatedPayloadError(FormatError):
    pass


class SizeMismatchError(FormatError):
    pass


class UnknownCodecError(FormatError):
    pass
