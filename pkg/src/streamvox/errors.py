"""Exception taxonomy shared across the engine."""


class StreamvoxError(Exception):
    """Base class for all engine errors."""


class EmptyInput(StreamvoxError):
    """An operation received an empty signal or sequence."""


class ShapeMismatch(StreamvoxError):
    """Input dimensions do not match what a layer or operation expects."""


class NumericalError(StreamvoxError):
    """A computation produced or received non-finite / invalid numbers."""


class DegenerateSpectrum(StreamvoxError):
    """A power spectrum or autocorrelation carries no usable energy."""


class InvalidProfile(StreamvoxError):
    """A speaker profile is missing, inconsistent, or has invalid statistics."""


class BadMagic(StreamvoxError):
    """Weight bundle does not start with the expected magic bytes."""


class VersionMismatch(StreamvoxError):
    """Weight bundle format version is not supported."""


class TruncatedFile(StreamvoxError):
    """Weight bundle ends before all declared data was read."""
