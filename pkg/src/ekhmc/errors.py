"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Raised when arguments violate a documented precondition."""


class EvaluationError(RuntimeError):
    """A forward-model evaluation failed.

    ``index`` is the particle (column) whose evaluation raised, when known.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class NumericalError(RuntimeError):
    """A numerical procedure diverged or failed to converge.

    ``time`` carries the integration time at which divergence was detected
    and ``iterations`` the solver iteration count, whichever applies.
    """

    def __init__(self, message, time=None, iterations=None):
        super().__init__(message)
        self.time = time
        self.iterations = iterations


class SamplerError(RuntimeError):
    """A sampler run aborted part way; carries what was computed so far."""

    def __init__(self, message, ensemble=None, trace=None):
        super().__init__(message)
        self.ensemble = ensemble
        self.trace = [] if trace is None else trace
