"""Exception hierarchy shared by all nervcp modules."""


class NervcpError(Exception):
    """Base class for every error raised by this package."""


class MissingInput(NervcpError):
    """Input path is missing, empty, or unreadable."""


class DecodeError(NervcpError):
    """A frame or video file could not be decoded."""


class ShapeMismatch(NervcpError):
    """Array shapes are inconsistent with each other or with a config."""


class InvalidCount(NervcpError):
    """A frame/sample count is non-positive."""


class OutOfRangeTimestamp(NervcpError):
    """Timestamp outside the (0, 1] grid."""


class ConfigError(NervcpError):
    """A configuration value is invalid or internally inconsistent."""


class ConfigMismatch(NervcpError):
    """Two configs that must agree (key vs. model, model vs. frames) do not."""


class DivergenceError(NervcpError):
    """Training loss became non-finite."""


class FormatVersionError(NervcpError):
    """Serialized file has an unknown magic or an unsupported version."""


class ChecksumError(NervcpError):
    """Serialized file failed its CRC32 integrity check."""


class NonFiniteInput(NervcpError):
    """An operation received NaN or infinite values."""


class ZeroPixels(NervcpError):
    """Pixel count of zero where a positive count is required."""


class DegenerateFrame(NervcpError):
    """Frame statistics are undefined (constant frame)."""


class FrameTooSmall(NervcpError):
    """Frame too small for the requested neighborhood operation."""


class UsageError(NervcpError):
    """Bad command-line invocation."""
