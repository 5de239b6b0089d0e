"""Exception types shared across the engine.

Every error raised by this package derives from DynProtoError so callers can
catch one base class. Validation-style errors (bad inputs, malformed files,
bad configuration) additionally derive from ValidationError; the CLI maps
those to exit code 2 and everything else to exit code 3.
"""


class DynProtoError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(DynProtoError):
    """Input or configuration rejected before any processing started."""


class ZeroVector(ValidationError):
    """A feature row with all-zero coordinates; signals corrupt input."""


class DimensionMismatch(ValidationError):
    """Operands disagree on feature dimension or class count."""


class InvalidConfig(ValidationError):
    """A configuration value is outside its legal range."""


class EmptyInput(ValidationError):
    """An operation that needs at least one element received none."""


class OutOfRange(ValidationError):
    """A scalar input violates its documented range."""


class ClassOutOfRange(ValidationError):
    """A class index outside [0, C)."""


class SeedOverflow(ValidationError):
    """A seeded cache initialization exceeds the cache capacity."""


class MissingAlpha(DynProtoError):
    """Adaptive-phase admission asked for alpha before it was computed."""


class MissingClass(ValidationError):
    """A class has no training features."""


class DetectorInputMissing(ValidationError):
    """The chosen base detector needs logits but none were supplied."""


class InsufficientData(ValidationError):
    """A metric needs at least one sample of each ground-truth kind."""


class FormatError(ValidationError):
    """Base class for feature-file format violations."""


class BadMagic(FormatError):
    """File does not start with the expected magic bytes."""


class UnsupportedVersion(FormatError):
    """Header version or dtype code this reader does not understand."""


class TruncatedPayload(FormatError):
    """Payload length disagrees with the header's row count and dimension."""


class InvalidSpec(ValidationError):
    """A synthetic-data or scenario specification is malformed."""


class DatasetNotFound(ValidationError):
    """A scenario references a data source that does not exist."""


class InsufficientPool(ValidationError):
    """A requested subsample is larger than the available pool."""


class IOFailure(DynProtoError):
    """An underlying filesystem operation failed."""
