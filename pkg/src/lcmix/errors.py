"""Exception types shared across the package."""


class LcmixError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(LcmixError, ValueError):
    """Invalid input data, schema, configuration, or parameter values."""


class EstimationError(LcmixError, RuntimeError):
    """Numerical estimation failed (optimizer breakdown, degenerate fit, ...)."""


class EmptyClassError(EstimationError):
    """A latent class lost essentially all of its responsibility mass."""


class LineSearchError(EstimationError):
    """The Wolfe line search could not find an acceptable step."""


class NonFiniteObjectiveError(EstimationError):
    """Objective or gradient evaluated to a non-finite value.

    Carries the offending point in ``point``.
    """

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point
