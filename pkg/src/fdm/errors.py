"""Exception types shared across the package.

The CLI maps these onto exit codes: usage errors exit 1, data/validation
errors exit 2, numerical failures exit 3.
"""


class FdmError(Exception):
    """Base class for all package errors."""


class EmptyCorpus(FdmError):
    """No document survived corpus filtering."""


class DegenerateDocument(FdmError):
    """Document too short for pair statistics (fewer than 2 tokens)."""


class VocabMismatch(FdmError):
    """Dictionary sizes of two artifacts disagree."""


class DimensionMismatch(FdmError):
    """Shapes of two numeric artifacts disagree."""


class FormatError(FdmError):
    """A file does not conform to its declared format."""


class NonFiniteLoss(FdmError):
    """Training objective became NaN or infinite (likely divergence)."""
