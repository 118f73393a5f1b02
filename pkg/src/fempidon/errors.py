"""Exception types shared across the package."""


class FempidonError(Exception):
    """Base class for all package errors."""


class ConfigError(FempidonError):
    """Invalid experiment configuration; carries every problem found."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("\n".join(self.problems))


class NumericalError(FempidonError):
    """A numerical stage failed (solver breakdown, divergence, budget)."""


class SolverError(NumericalError):
    def __init__(self, message, residual=None, iterations=None):
        self.residual = residual
        self.iterations = iterations
        super().__init__(message)


class RefinementBudgetError(NumericalError):
    pass


class OutsideDomainError(FempidonError, ValueError):
    pass
