"""Exception types shared across the package."""


class RuvError(Exception):
    """Base class for all package errors."""


class ValidationError(RuvError, ValueError):
    """Input data violates a structural invariant.

    ``problems`` holds one message per violated invariant so callers can
    report every issue at once instead of the first one only.
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class NumericalError(RuvError, ArithmeticError):
    """A numerical step failed (singular system, no convergence)."""


class SingularSystemError(NumericalError):
    """The k x k control system is singular or too ill-conditioned to solve."""

    def __init__(self, k, rcond, smallest_pivot):
        self.k = k
        self.rcond = rcond
        self.smallest_pivot = smallest_pivot
        super().__init__(
            f"control system for k={k} is ill-conditioned "
            f"(reciprocal condition {rcond:.3e}, smallest pivot {smallest_pivot:.3e}); "
            "use a smaller k or more negative controls"
        )


class ConvergenceWarning(RuntimeWarning):
    """An iterative routine hit its iteration cap before reaching tolerance."""
