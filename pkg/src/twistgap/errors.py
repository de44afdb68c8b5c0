"""Exception hierarchy shared across the package."""


class TwistGapError(Exception):
    """Base class for all errors raised by twistgap."""


class DegenerateShape(TwistGapError):
    pass


class EmptyGrid(TwistGapError):
    pass


class TruncationTooSmall(TwistGapError):
    pass


class NoConvergence(TwistGapError):
    """Iterative eigensolver failed; ``diagnostics`` holds solver state."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class EdgeUnresolved(TwistGapError):
    pass


class NearDegenerate(TwistGapError):
    pass


class NotConverged(TwistGapError):
    """A count did not stabilise within the refinement budget."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []


class InsufficientGrowth(TwistGapError):
    pass


class GridTooCoarse(TwistGapError):
    pass


class ResolutionTooCoarse(TwistGapError):
    pass


class FactorizationBreakdown(TwistGapError):
    pass


class ConfigError(TwistGapError):
    pass
