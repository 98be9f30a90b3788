"""Exception hierarchy shared across the package.

Every error carries an ``exit_code`` so the CLI can map failures onto its
stable exit-code contract: 2 for I/O and model problems, 3 for
compatibility problems, 4 for parameter validation.
"""


class CfidError(Exception):
    exit_code = 1


class IoError(CfidError):
    """File or directory missing, unreadable, or unwritable."""

    exit_code = 2


class DecodeError(CfidError):
    """Corrupt or unsupported image file."""

    exit_code = 2


class EmptySetError(CfidError):
    """Image directory contains no decodable images."""

    exit_code = 2


class ModelIoError(CfidError):
    """Model file missing, corrupt, or not loadable."""

    exit_code = 2


class FormatVersionError(CfidError):
    """Persisted bundle has an unknown format version."""

    exit_code = 2


class ChecksumError(CfidError):
    """Persisted array bytes do not match their recorded digest."""

    exit_code = 2


class ShapeMismatch(CfidError):
    """Model taps disagree with the declared level table."""

    exit_code = 3


class DimensionMismatch(CfidError):
    exit_code = 3


class RepresentationMismatch(CfidError):
    """No common dense/lowrank computation path exists."""

    exit_code = 3


class ExtractorMismatch(CfidError):
    """Statistics from different extractors cannot be compared."""

    exit_code = 3


class WrongLevelCount(CfidError):
    exit_code = 4


class NonFiniteSample(CfidError):
    exit_code = 4


class InsufficientSamples(CfidError):
    """Covariance needs at least two samples."""

    exit_code = 4


class ValidationError(CfidError):
    """Invalid parameter value."""

    exit_code = 4


class NumericalFailure(CfidError):
    """Eigendecomposition or SVD failed to converge."""

    exit_code = 1
