"""Exception hierarchy shared across the package."""


class MactError(Exception):
    """Base class for every error raised by :mod:`mact`."""


class DomainError(MactError, ValueError):
    """A query fell outside the extent of a height field."""


class ConfigError(MactError, ValueError):
    """An environment, task or experiment configuration is invalid."""


class ParameterError(MactError, ValueError):
    """A numeric parameter violates an operation's precondition."""


class TaskError(MactError, ValueError):
    """A region is too small or degenerate for the requested scan path."""


class RecordingError(MactError, RuntimeError):
    """The scripted expert stopped making progress while recording."""


class EpisodeFormatError(MactError, OSError):
    """Base class for on-disk episode/checkpoint decoding failures."""


class MissingMetadataError(EpisodeFormatError):
    pass


class VersionMismatchError(EpisodeFormatError):
    pass


class TruncatedFileError(EpisodeFormatError):
    pass


class ShapeHeaderError(EpisodeFormatError):
    pass


class ShapeMismatchError(EpisodeFormatError):
    pass


class NumericError(MactError, FloatingPointError):
    """A loss or gradient became non-finite."""
