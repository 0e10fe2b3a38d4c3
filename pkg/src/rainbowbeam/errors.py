"""Exception types shared across the toolkit."""


class RainbowBeamError(Exception):
    """Base class for all domain errors."""


class OutOfVisibleRange(RainbowBeamError):
    """A main-lobe angle left the visible region (arccos argument outside [-1, 1])."""


class InfeasibleDesign(RainbowBeamError):
    """The requested sector/bandwidth combination admits no rainbow-beam design."""


class EmptyReflectionSet(RainbowBeamError):
    """A user is illuminated by no subcarrier beam above the gain threshold."""


class DetectionFailure(RainbowBeamError):
    """Peak search found fewer or more users than expected."""


class NumericalDegeneracy(RainbowBeamError):
    """An amplitude ratio became numerically meaningless (near-zero denominator)."""


class NonConvergence(RainbowBeamError):
    """An iterative solver exhausted its iteration budget."""


class DegenerateSubspace(RainbowBeamError):
    """Signal/noise eigen-subspaces could not be separated."""


class RankDeficiency(RainbowBeamError):
    """A steering matrix is too ill-conditioned to invert (angles too close)."""


class IndexOutOfCodebook(RainbowBeamError):
    """A resolved subcarrier index fell outside the codebook range."""


class TrackLost(RainbowBeamError):
    """No detectable peak inside a user's tracking window; re-training needed."""
