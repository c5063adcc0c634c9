"""Exception types raised across the package."""


class TascError(Exception):
    """Base class for every error raised by tascforge."""


class ConfigError(TascError):
    pass


class ShapeMismatch(TascError, ValueError):
    pass


class DimensionMismatch(TascError, ValueError):
    pass


class NotPositiveDefinite(TascError, ArithmeticError):
    pass


class SingularMatrix(TascError, ArithmeticError):
    pass


class InvalidConfig(TascError, ValueError):
    """A head configuration holds a value outside its choice list."""


class SpaceTooLarge(TascError):
    pass


class EmptyCandidatePool(TascError):
    pass


class ArchitectureInfeasible(TascError):
    """A layer would shrink a feature map below 1x1 (or cannot be placed)."""


class NonFiniteLoss(TascError, FloatingPointError):
    pass


class ZeroNormVector(TascError, ValueError):
    pass


class InconsistentShapes(TascError, ValueError):
    pass


class LayerIneligible(TascError):
    pass


class InsufficientDistinctFilters(TascError):
    pass


class GroupMismatch(TascError):
    pass


class WouldEmptyLayer(TascError):
    pass


class NoEligibleLayers(TascError):
    pass


class CheckpointError(TascError):
    pass


class BadMagic(TascError):
    pass


class CountMismatch(TascError):
    pass


class TruncatedFile(TascError):
    pass


class ClassTooSmall(TascError):
    pass


class EmptyClass(TascError):
    pass
