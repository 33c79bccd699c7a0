"""Exception hierarchy.

Diagnostic conditions that are not fatal (non-convergence, unstable Monte
Carlo estimates, events never hit) are reported as flags on result objects
instead of being raised.
"""


class MFLDPError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(MFLDPError):
    def __init__(self, message, path=None):
        self.path = path
        where = "/".join(str(p) for p in path) if path else "<root>"
        super().__init__(f"{where}: {message}")


class NumericalFailure(MFLDPError):
    """A computation did not produce a usable number."""


class SpaceMismatch(MFLDPError):
    pass


class NormalizationDiverged(NumericalFailure):
    pass


class EmptyConfiguration(MFLDPError):
    pass


class ArityMismatch(MFLDPError):
    pass


class BudgetExhausted(NumericalFailure):
    pass


class TooFewParticles(MFLDPError):
    pass


class IndexOutOfRange(MFLDPError):
    pass


class CacheInvalidated(MFLDPError):
    pass


class ReplicaLengthMismatch(MFLDPError):
    pass


class TooLargeToEnumerate(MFLDPError):
    pass


class NoFiniteStartingPoint(NumericalFailure):
    pass


class Diverged(NumericalFailure):
    pass


class NonDifferentiableFamily(MFLDPError):
    pass


class SingularConfiguration(NumericalFailure):
    pass


class SearchSpaceUnsupported(MFLDPError):
    pass


class RequiresSmoothFamily(MFLDPError):
    pass


class DimensionMismatch(MFLDPError):
    pass


class SupportTooLarge(MFLDPError):
    pass


class EventEmpty(MFLDPError):
    pass


class SingularFamilyRejected(MFLDPError):
    """Langevin dynamics requested for a singular interaction without ``force``."""
