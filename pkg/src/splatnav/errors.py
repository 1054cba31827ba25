"""Exception types shared across the toolkit."""


class SplatNavError(Exception):
    """Base class for all toolkit errors."""


class InvalidParameterError(SplatNavError):
    """An input value violates a documented precondition (non-finite, wrong range, ...)."""


class DegenerateSplatError(SplatNavError):
    """A projected 2D covariance is singular even after the dilation floor."""


class EmptySupportError(SplatNavError):
    """A loss was asked to average over zero valid pixels/patches."""


class DatasetError(SplatNavError):
    """A scene directory is missing files or carries a malformed cameras.json."""


class SpawnError(SplatNavError):
    """Episode layout sampling failed after the retry budget."""


class ProtocolError(SplatNavError):
    """Client/server message violates the environment protocol (e.g. step before reset)."""


class TrainingError(SplatNavError):
    """Optimization aborted (e.g. non-finite loss)."""
