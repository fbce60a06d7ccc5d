"""Exception hierarchy shared across the toolkit."""


class SegpostError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(SegpostError):
    """A domain object violates one of its invariants."""


class ParameterError(SegpostError):
    """A parameter is outside its documented range."""


class ShapeMismatchError(SegpostError):
    """Two inputs that must share dimensions do not."""


class NumericsError(SegpostError):
    """A computation produced non-finite intermediate values."""


class FormatError(SegpostError):
    """A file does not conform to its on-disk format."""


class BadMagicError(FormatError):
    """The file does not start with the expected magic bytes."""


class UnsupportedVersionError(FormatError):
    """The file declares a format version this reader does not handle."""


class TruncatedPayloadError(FormatError):
    """The file ends before the payload declared by its header."""


class TrailingDataError(FormatError):
    """The file contains bytes beyond the payload declared by its header."""


class DimensionOverflowError(FormatError):
    """The header declares more than 2**31 elements."""


class PngFormatError(FormatError):
    """A PNG has the wrong mode, bit depth, or channel count."""


class LabelRangeError(FormatError):
    """A label file contains a class value outside the valid range."""


class PaletteError(SegpostError):
    """A palette is malformed or does not cover the requested classes."""


class ConfigError(SegpostError):
    """A pipeline configuration is invalid."""


class EmptyEvaluationError(SegpostError):
    """An evaluation contains no class with any ground-truth or predicted pixel."""
