"""Exception hierarchy shared by every pgmm module."""


class PgmmError(Exception):
    """Base class for all errors raised by pgmm."""


class ContractError(PgmmError, ValueError):
    """An argument violates a documented precondition (shape, sign, range)."""


class EvaluationError(PgmmError):
    """A moment function produced a non-finite value.

    Parameters
    ----------
    message : str
    row : int or None
        Index of the offending observation, when one can be named.
    """

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class NumericalError(PgmmError):
    """A factorization or inversion failed even after regularization."""


class RankError(NumericalError):
    """A matrix that must be invertible is numerically singular."""

    def __init__(self, message, smallest_singular_value=None):
        super().__init__(message)
        self.smallest_singular_value = smallest_singular_value


class OptimizationError(PgmmError):
    """No optimizer start converged; carries the best point found."""

    def __init__(self, message, best_x=None, best_fun=None):
        super().__init__(message)
        self.best_x = best_x
        self.best_fun = best_fun


class InitializationError(PgmmError):
    """The sampler could not find a starting point with finite log posterior."""


class ConfigError(PgmmError):
    """A run configuration is malformed or inconsistent."""

    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class DataError(PgmmError):
    """Input data cannot be read or does not match the model."""


class SimulationError(PgmmError):
    """Too many Monte Carlo replications failed for the report to be trusted."""

    def __init__(self, message, failures=0, n_reps=0):
        super().__init__(message)
        self.failures = failures
        self.n_reps = n_reps
