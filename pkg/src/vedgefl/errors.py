"""Exception types shared across the package."""


class DomainError(ValueError):
    """An input lies outside the domain where an operation is defined."""


class ContractViolation(ValueError):
    """Arguments are individually valid but mutually inconsistent."""


class InfeasibleError(DomainError):
    """No decision satisfies the constraint set.

    ``constraint`` names the binding constraint so callers can report it.
    """

    def __init__(self, message: str, constraint: str = "unknown"):
        super().__init__(message)
        self.constraint = constraint


class TrainingDivergedError(FloatingPointError):
    """A gradient step produced non-finite values."""
