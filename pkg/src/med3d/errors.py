"""Exception types shared across the package.

Each error names the contract it enforces; modules raise these rather than
bare ValueError so callers (and the CLI) can report failures precisely.
"""


class Med3dError(Exception):
    """Base class for all package errors."""


# ---------------------------------------------------------------- volume I/O

class BadMagic(Med3dError):
    """File is not a single-file NIfTI-1 image."""


class UnsupportedDtype(Med3dError):
    """On-disk datatype code outside the supported set."""


class TruncatedFile(Med3dError):
    """File ends before the declared voxel data."""


class NonFiniteVoxel(Med3dError):
    """Voxel data contains NaN or Inf after scaling."""


class NonPositiveSpacing(Med3dError):
    """pixdim holds a zero, negative, or non-finite spacing."""


class IoFailure(Med3dError):
    """Underlying read/write failed."""


class ParseError(Med3dError):
    """Structured text file violated its grammar.

    Carries the one-based line number of the offending line.
    """

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DuplicateDomainId(Med3dError):
    """Two domains in one manifest share an id."""


class EmptyDomain(Med3dError):
    """A manifest domain lists no cases."""


class NotLabelGrid(Med3dError):
    """Volume cannot be interpreted as a label grid."""


# ---------------------------------------------------------------- preprocessing

class EmptyList(Med3dError):
    """An aggregate over cases received no entries."""


class NonPositiveTarget(Med3dError):
    """Resampling target spacing must be strictly positive."""


class NoForeground(Med3dError):
    """Crop sampling requires at least one foreground voxel."""


class RatingOutOfRange(Med3dError):
    """Malignancy rating outside 1..5."""


# ---------------------------------------------------------------- tensor engine

class ShapeMismatch(Med3dError):
    """Operand shapes are incompatible for the requested op."""


class TargetOutOfRange(Med3dError):
    """Cross-entropy target id is >= the class count."""


class NotScalar(Med3dError):
    """backward() requires a scalar loss."""


# ---------------------------------------------------------------- models

class InvalidDepth(Med3dError):
    """Requested encoder depth is not in the supported family."""


class DuplicateBranch(Med3dError):
    """Two decoder branches share a domain id."""


class UnknownDomain(Med3dError):
    """forward was routed to a domain with no branch."""


class ArchMismatch(Med3dError):
    """Checkpoint architecture metadata disagrees with the target model."""


class BadCheckpoint(Med3dError):
    """Checkpoint bytes violate the container format."""


# ---------------------------------------------------------------- training / metrics

class EmptyAfterFraction(Med3dError):
    """Data fraction reduced a domain to zero cases."""


class EmptyMask(Med3dError):
    """Surface distance is undefined for an empty mask."""


class EmptyInput(Med3dError):
    """Metric over an empty collection."""
