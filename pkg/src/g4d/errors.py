"""Exception hierarchy.

Every data-level failure raised by the engine derives from :class:`G4DError`;
the CLI maps those to exit code 2.
"""


class G4DError(Exception):
    """Base class for typed engine errors."""


class ShapeMismatch(G4DError):
    pass


class NonFiniteValue(G4DError):
    pass


class OpacityOutOfRange(G4DError):
    pass


class InvalidValue(G4DError):
    """A value violates a documented range (non-positive scale, bad intrinsics, ...)."""


class DegenerateTranslation(G4DError):
    pass


class TooFewCameras(G4DError):
    pass


class LengthMismatch(G4DError):
    pass


class NonPositiveGauge(G4DError):
    pass


class SingularCovariance(G4DError):
    pass


class TimeOutOfRange(G4DError):
    pass


class WeightFileMismatch(G4DError):
    pass


class EmptyInput(G4DError):
    pass


class EmptyCorrespondence(G4DError):
    pass


class DegenerateConfiguration(G4DError):
    pass


class ImageTooSmall(G4DError):
    pass


class BadConfig(G4DError):
    pass


class AssetError(G4DError):
    """Base for serialization failures."""


class CorruptHeader(AssetError):
    pass


class TruncatedPayload(AssetError):
    pass


class VersionUnsupported(AssetError):
    pass


class UnsupportedBitDepth(AssetError):
    pass


class IoError(AssetError, OSError):
    pass


class ParseError(AssetError):
    def __init__(self, message, line, column):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class InvariantViolation(Exception):
    """An internal consistency check failed; not a data problem (CLI exit code 3)."""
