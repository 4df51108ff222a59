"""Exception types shared across the package."""


class SagOptError(Exception):
    """Base class for all package errors."""


class DivergenceError(SagOptError):
    """A stepper produced a non-finite value."""

    def __init__(self, index, message=None):
        self.index = index
        super().__init__(message or f"non-finite value at iteration {index}")


class DegenerateSchemeError(SagOptError):
    """Leading coefficient of a recurrence vanished."""


class IntegrationError(SagOptError):
    """Reference ODE integration blew up."""

    def __init__(self, t_last, message=None):
        self.t_last = t_last
        super().__init__(message or f"integration failed after t={t_last!r}")


class OutOfRangeError(SagOptError, ValueError):
    """Evaluation point lies outside the stored solution interval."""


class PreconditionError(SagOptError, ValueError):
    """Input violates a stated precondition."""

    def __init__(self, message, index=None):
        self.index = index
        super().__init__(message)


class StallError(SagOptError):
    """Backtracking exhausted its per-iteration reduction budget."""

    def __init__(self, iteration, message=None):
        self.iteration = iteration
        super().__init__(message or f"backtracking stalled at iteration {iteration}")


class SvdConvergenceError(SagOptError):
    """Jacobi sweeps did not converge within the cap."""
