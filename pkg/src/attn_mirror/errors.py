"""Exception hierarchy shared by every module."""


class AttnMirrorError(Exception):
    """Base class for all package errors."""


class DimensionError(AttnMirrorError, ValueError):
    """Array shapes are inconsistent or a dimension is zero."""


class ParameterError(AttnMirrorError, ValueError):
    """A scalar parameter is outside its admissible range."""


class DomainError(AttnMirrorError, ValueError):
    """An argument lies outside the domain where the quantity is defined."""


class InfeasibleError(AttnMirrorError):
    """A max-margin problem has no feasible point.

    ``pair`` holds the offending ``(sample, token)`` index when a single
    degenerate constraint is to blame.
    """

    def __init__(self, message, pair=None):
        super().__init__(message)
        self.pair = pair


class DivergedError(AttnMirrorError):
    """A training run produced a non-finite loss or iterate."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class MaxIterError(AttnMirrorError):
    """An iterative solver ran out of iterations before meeting its tolerance."""

    def __init__(self, message, gap=None):
        super().__init__(message)
        self.gap = gap
