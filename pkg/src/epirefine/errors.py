"""Exception hierarchy shared by every module in the package."""


class RefineError(Exception):
    """Base class for all errors raised by epirefine."""


class InvalidArgumentError(RefineError, ValueError):
    pass


class BranchAmbiguityError(RefineError, ValueError):
    """Rotation angle too close to pi for a unique logarithm."""


class BehindCameraError(RefineError, ValueError):
    pass


class DegenerateConfigurationError(RefineError, ValueError):
    pass


class TooSmallError(RefineError, ValueError):
    pass


class InsufficientOverlapError(RefineError):
    pass


class SingularSystemError(RefineError):
    pass


class EmptyGroundTruthError(RefineError, ValueError):
    pass


class EmptyRegionError(RefineError, ValueError):
    pass


class RendererGapError(RefineError):
    """A camera ray hit no plane and the scene has no background."""


class ParseError(RefineError, ValueError):
    """Malformed input file; the message names the offending line or offset."""
