"""Exception types shared across the engine."""


class PspotError(Exception):
    """Base class for all engine errors."""


class DimensionExceeded(PspotError):
    """An image is larger than the canvas it must fit on."""


class IndexOutOfRange(PspotError):
    """A grid cell index lies outside the level resolution."""


class ModelLoadError(PspotError):
    """A serialized model file is missing, unreadable or malformed."""


class ShapeMismatch(PspotError):
    """An extractor input or output has the wrong spatial shape or depth."""


class MissingClass(PspotError):
    """A training set does not contain every region class."""


class EmptySplit(PspotError):
    """A dataset split received zero samples."""


class LevelMismatch(PspotError):
    """A model or shard was built for a different pyramid level."""


class CorruptIndex(PspotError):
    """An index file failed its magic, length or checksum validation."""


class VersionMismatch(PspotError):
    """A persisted file was written by an incompatible format version."""


class ZeroRelevant(PspotError):
    """Average precision is undefined without relevant items."""


class UnknownQueryId(PspotError):
    """A run references a query absent from the ground truth."""


class UnknownPageId(PspotError):
    """A result references a page absent from the collection."""


class ConfigError(PspotError):
    """The pipeline configuration is invalid or references missing paths."""
