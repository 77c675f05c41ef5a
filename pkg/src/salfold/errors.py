"""Exception hierarchy.

Everything raised on bad input derives from :class:`DataError` so the CLI
can map it to exit status 2; :class:`UsageError` maps to 1.
"""


class SalfoldError(Exception):
    """Base class for all package errors."""


class UsageError(SalfoldError):
    """Bad command-line or configuration input."""


class DataError(SalfoldError):
    """Input data could not be processed."""


# imagecore
class UnreadableFile(DataError):
    pass


class UnsupportedFormat(DataError):
    pass


class ImageTooSmall(DataError):
    pass


class GridTooFine(DataError):
    pass


class InvalidSpec(DataError):
    pass


class ManifestError(DataError):
    pass


# saliency
class EmptyInput(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class CorruptTemplateFile(DataError):
    pass


# folding
class PlanShapeMismatch(DataError):
    pass


class CorruptPlanFile(DataError):
    pass


# lbp
class OutOfBounds(DataError):
    pass


class BlockTooSmall(DataError):
    pass


class CorruptFeatureFile(DataError):
    pass


# svm
class SingleClassInput(DataError):
    pass


class NonFiniteFeature(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class CorruptModelFile(DataError):
    pass


class FingerprintMismatch(DataError):
    pass


# irma
class IrmaCodeError(DataError):
    pass


class BadLength(IrmaCodeError):
    pass


class BadCharacter(IrmaCodeError):
    pass


class BadAxisStructure(IrmaCodeError):
    pass


class LengthMismatch(DataError):
    pass


class MissingArtifact(DataError):
    pass
