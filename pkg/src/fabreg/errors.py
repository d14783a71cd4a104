"""Exception hierarchy."""


class FabregError(Exception):
    """Base class for all package errors."""


class DomainError(FabregError, ValueError):
    """An argument lies outside the domain of a function."""


class InputError(FabregError, ValueError):
    """Malformed regression data or configuration."""


class RankDeficientError(InputError):
    def __init__(self, column, index, ratio):
        self.column = column
        self.index = index
        self.ratio = ratio
        super().__init__(
            f"design matrix is rank deficient: column {column!r} (index {index}) "
            f"is linearly dependent on earlier columns (relative residual {ratio:.3g})")


class DimensionError(InputError):
    """Too few residual degrees of freedom for the requested operation."""


class EmptyContextError(FabregError):
    """No adaptation data: the coefficient context has an empty z2 (p == 1)."""


class SingularMomentSystemError(FabregError):
    def __init__(self, det):
        self.det = det
        super().__init__(
            f"moment equations are singular (relative determinant {det:.3g}); "
            "the spectrum is degenerate, use the box-constrained MLE instead")


class ConvergenceError(FabregError):
    """The endpoint solver failed; carries the bracket state."""

    def __init__(self, message, **state):
        self.state = state
        detail = ", ".join(f"{k}={v!r}" for k, v in state.items())
        super().__init__(f"{message} ({detail})" if detail else message)


class OptimizerError(FabregError):
    """Marginal-likelihood optimisation failed; carries the seed trace."""

    def __init__(self, message, trace=None):
        self.trace = trace or []
        super().__init__(message)
