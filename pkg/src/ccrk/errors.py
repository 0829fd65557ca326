"""Exception hierarchy shared by all ccrk modules.

Exit-code mapping used by the CLI: usage errors exit 1, data errors
(DataError subtree) exit 2, numerical failures (NumericalError subtree)
exit 3.
"""


class CcrkError(Exception):
    """Base class for all ccrk errors."""


class DataError(CcrkError):
    """Malformed inputs, files, or configurations."""


class NumericalError(CcrkError):
    """Numerical preconditions violated or computation degenerated."""


class InvalidConfig(DataError):
    pass


class ZeroRow(NumericalError):
    """A row norm fell below the degeneracy threshold (1e-30)."""


class EmptyInput(DataError):
    pass


class NonFiniteEvaluation(NumericalError):
    """A function evaluated to NaN or infinity during differentiation."""


class FormatError(DataError):
    """Unparseable corpus file; carries the byte offset of the failure."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UnknownMagic(FormatError):
    pass


class DimensionMismatch(DataError):
    pass


class NotNormalized(NumericalError):
    """Operation requires unit-norm embeddings but the corpus is not normalized."""


class DegenerateBatch(NumericalError):
    """Too few candidates for a contrastive or mining computation."""


class AllMasked(DataError):
    """Every token position is masked; no context remains."""


class EmptySequence(DataError):
    pass


class SingleLanguage(DataError):
    """Rank-variance requires at least two languages."""


class DegenerateDirection(NumericalError):
    """An alignment direction has near-zero length."""


class AntipodalTexts(NumericalError):
    """Text pair sums to (near) zero; the arc midpoint is undefined."""


class Divergence(NumericalError):
    """Training loss became non-finite; carries the failing step."""

    def __init__(self, message, step=None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step
