"""Exception hierarchy shared across the package."""


class BalanceKitError(Exception):
    """Base class for all package errors."""


class SchemaError(BalanceKitError):
    """Raised when a CSV or its column-role schema is invalid."""


class InfeasibleProblemError(BalanceKitError):
    """A balancing problem has no feasible weights.

    This is a legitimate scientific outcome, not a bug: the benchmark
    harness counts it as an unsolved dataset rather than crashing.
    """

    def __init__(self, message, worst_feature=None, residual=None):
        super().__init__(message)
        self.worst_feature = worst_feature
        self.residual = residual


class ConvergenceError(BalanceKitError):
    """A solver exhausted its iteration or restart budget."""

    def __init__(self, message, best_residual=None):
        super().__init__(message)
        self.best_residual = best_residual


class OutcomeWithheldError(BalanceKitError):
    """Outcome data was touched while balancing.

    Balancing must only look at covariates; outcomes enter at the
    estimation stage. Accessing the outcome of a withheld view is a
    programming error in the method, surfaced loudly.
    """
