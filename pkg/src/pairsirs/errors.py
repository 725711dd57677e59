"""Exception hierarchy shared by all modules."""


class ModelDomainError(ValueError):
    """Input lies outside the region where a quantity is defined."""


class PreconditionError(ModelDomainError):
    """A documented precondition of an operation does not hold."""


class DegenerateEntryError(PreconditionError):
    """Entry point with S = 1, for which the exit-time equation is singular."""


class StiffnessError(RuntimeError):
    """Adaptive step size fell below the underflow threshold."""

    def __init__(self, message, t=None, state=None):
        super().__init__(message)
        self.t = t
        self.state = state


class ConvergenceError(RuntimeError):
    """An iterative solver ran out of iterations."""

    def __init__(self, message, residual=None, state=None):
        super().__init__(message)
        self.residual = residual
        self.state = state


class ConsistencyError(RuntimeError):
    """Two independent routes to the same quantity disagree."""


class GraphGenerationError(RuntimeError):
    """Random regular graph could not be generated within the retry budget."""
