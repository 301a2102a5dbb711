"""Exception types shared across the package."""


class SplitSimError(Exception):
    """Base class for all package errors."""


class ShapeError(SplitSimError, ValueError):
    """Array shapes do not satisfy an operation's contract."""


class StateError(SplitSimError, RuntimeError):
    """An object was used in an invalid state (e.g. a tape replayed twice)."""


class FormatError(SplitSimError, ValueError):
    """A file does not parse as the expected on-disk format."""


class ConfigError(SplitSimError, ValueError):
    """An experiment or scheme configuration is invalid.

    The message names the offending field.
    """


class ProtocolError(SplitSimError, RuntimeError):
    """A message or step violated the training protocol's contract."""
