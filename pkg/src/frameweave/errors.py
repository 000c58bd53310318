"""Exception types shared across the toolkit."""


class FrameweaveError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(FrameweaveError, ValueError):
    """Tensor or layer shapes are inconsistent."""


class ParameterError(FrameweaveError, ValueError):
    """A hyperparameter or argument is outside its legal range."""


class NumericError(FrameweaveError, ArithmeticError):
    """A computation produced or received non-finite values."""


class DecodeError(FrameweaveError, ValueError):
    """An image or container file could not be decoded."""


class DatasetError(FrameweaveError, ValueError):
    """A dataset violates its structural requirements."""


class FormatError(FrameweaveError, ValueError):
    """A binary file has the wrong magic, version, or layout."""


class IntegrityError(FormatError):
    """A binary file is truncated or internally inconsistent."""


class StateError(FrameweaveError, RuntimeError):
    """Runtime state (e.g. a forward trace) does not match the network."""
