"""Exception hierarchy shared by all furstlab modules."""


class FurstlabError(Exception):
    """Base class for all library errors."""


class SingularInput(FurstlabError):
    """A matrix that must be invertible is (numerically) singular."""


class NonFinite(FurstlabError):
    """A computation produced inf or nan."""


class DimensionMismatch(FurstlabError):
    """Operands live in incompatible spaces."""


class IllConditioned(FurstlabError):
    """The requested quantity is numerically ambiguous at the given tolerance."""


class DimensionTooLarge(FurstlabError):
    """Combinatorial enumeration requested beyond the supported dimension."""


class NotComparable(FurstlabError):
    """The two topologies are not related by the refinement order."""


class NotGeneralPosition(FurstlabError):
    """Flag pair fails the transversality requirement."""


class TopologyMismatch(FurstlabError):
    """Configurations indexed by different topologies."""


class DegenerateAngle(FurstlabError):
    """Fiber chart anchor angle too close to zero."""


class NotSameFiber(FurstlabError):
    """Configurations do not project to the same base point."""


class SpectrumNotSimple(FurstlabError):
    """Lyapunov exponents are not separated well enough for the operation."""


class NotConverged(FurstlabError):
    """Iterative approximation did not reach the requested tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DepthInsufficient(FurstlabError):
    """Sampling depth too small for the stationary-measure approximation."""

    def __init__(self, message, displacement=None):
        super().__init__(message)
        self.displacement = displacement


class InsufficientScaling(FurstlabError):
    """Log-log regression quality below the acceptance threshold."""


class BinsTooSparse(FurstlabError):
    """No projection bin collected enough points for a fiber estimate."""


class StateExplosion(FurstlabError):
    """Exact convolution-power support grew past the hard cap."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class EstimatorUnstable(FurstlabError):
    """Subsample spread of an estimator exceeded the stability threshold."""


class EntropyExceedsBound(FurstlabError):
    """Entropy estimate above the exponent-difference bound: estimator inconsistency."""


class ChainMismatch(FurstlabError):
    """Arrow exponents are not nondecreasing along the supplied chain."""
