"""Exception and warning types raised by the estimation pipeline."""


class FpcaError(Exception):
    """Base class for all package errors."""


class InvalidInput(FpcaError, ValueError):
    """Malformed observations or configuration values."""


class NonFiniteInput(InvalidInput):
    pass


class InvalidConfig(InvalidInput):
    pass


class NoData(InvalidInput):
    pass


class NumericFailure(FpcaError):
    """A computation could not produce a usable numeric result."""


class NoEligibleCurves(NumericFailure):
    """Every curve has fewer than two observations."""


class GridMismatch(FpcaError, ValueError):
    pass


class DomainExceeded(NumericFailure):
    """An oblique interpolation point falls outside the smoothing grid."""


class NotPositiveDefinite(NumericFailure):
    pass


class NeedAtLeastTwoCurves(InvalidInput):
    pass


class IndexOutOfRange(FpcaError, IndexError):
    pass


class AllCandidatesFailed(NumericFailure):
    pass


class RankDeficientWarning(UserWarning):
    """Fewer positive eigenvalues than the requested rank."""


class DegenerateSpectrumWarning(UserWarning):
    """Two retained eigenvalues are closer than the relative gap tolerance."""


class ExcludedCurvesWarning(UserWarning):
    """Curves with a single observation were left out of the off-diagonal fit."""
