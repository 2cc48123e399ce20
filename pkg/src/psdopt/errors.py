"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Caller handed in data that violates a documented precondition."""


class DomainError(ValueError):
    """A point outside an objective's domain (e.g. the zero matrix for the
    trace-normalized objective)."""


class ParseError(ValueError):
    """Malformed input file; carries the 1-based line number."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class NumericalError(RuntimeError):
    """Non-finite values produced inside an iterative routine; carries the
    iteration index at which they appeared."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class SolverError(RuntimeError):
    """Outer solve failed; carries the outer iteration index."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class StepError(SolverError):
    """A single rank-one step could not be completed."""
