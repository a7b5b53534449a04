"""Exception and warning types.

Every error carries an ``exit_code`` used by the command line front end:
2 for invalid input, 3 for a numerical failure.
"""


class PoincareZetaError(Exception):
    exit_code = 3


class ValidationError(PoincareZetaError, ValueError):
    exit_code = 2


class DimensionError(ValidationError):
    pass


class ResolutionError(ValidationError):
    pass


class StepOverflow(PoincareZetaError):
    """Trajectory left the representable range (numerically escaping orbit)."""


class EmptySample(PoincareZetaError):
    pass


class NoCrossing(PoincareZetaError):
    pass


class EmptyAtlas(PoincareZetaError):
    pass


class CausticError(PoincareZetaError):
    pass


class GeneratingFunctionMismatch(PoincareZetaError):
    pass


class SingularBorder(PoincareZetaError):
    pass


class ContourTooClose(PoincareZetaError):
    pass


class DivergentExpansion(PoincareZetaError):
    pass


class BoundaryZero(PoincareZetaError):
    pass


class NoStableEigenvalues(PoincareZetaError):
    pass


class SpectralGapWarning(UserWarning):
    pass


class SectorBoundaryWarning(UserWarning):
    pass
