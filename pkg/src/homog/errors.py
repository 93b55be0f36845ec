"""Exception hierarchy shared by all modules."""


class HomogError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(HomogError):
    """Malformed scenario or field description."""


class DegenerateKernel(HomogError):
    pass


class NoSpectralGap(HomogError):
    pass


class SolveFailure(HomogError):
    pass


class DegenerateGerm(HomogError):
    pass


class BranchTrackingFailure(HomogError):
    pass


class CoefficientZero(HomogError):
    """A sharpness probe needs a coefficient that vanishes."""


class IdentityViolation(HomogError):
    pass


class SingularBasis(HomogError):
    pass


class RankDeficientSymbol(HomogError):
    pass


class SingularPointValue(HomogError):
    pass


class VoigtReussViolation(HomogError):
    pass


class SolvabilityViolation(HomogError):
    pass


class ClusterResolutionFailure(HomogError):
    pass


class StageError(HomogError):
    """A pipeline stage failed; ``stage`` names it and ``__cause__`` holds the original."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
