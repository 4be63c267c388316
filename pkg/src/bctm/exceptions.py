"""Exception hierarchy shared by all bctm modules."""


class BctmError(Exception):
    """Base class for every error raised by this package."""


class DomainError(BctmError, ValueError):
    """An argument lies outside the domain of a model function."""


class DegenerateIncidenceError(BctmError):
    """The cure rate is numerically 0 or 1, so the latency part is undefined."""


class LikelihoodDegenerateError(BctmError):
    """An interval-censored observation has zero probability under the model.

    Attributes
    ----------
    index : int
        Position of the offending observation in the dataset.
    iteration : int or None
        EM iteration during which the failure occurred, if any.
    """

    def __init__(self, message, index=None, iteration=None):
        super().__init__(message)
        self.index = index
        self.iteration = iteration


class NumericalDerivativeError(BctmError):
    """A finite-difference stencil hit a non-finite function value."""

    def __init__(self, message, coords):
        super().__init__(message)
        self.coords = coords


class RootFindingError(BctmError):
    """The incidence-coefficient system could not be solved to tolerance."""

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual
