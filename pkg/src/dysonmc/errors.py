"""Exception types shared across the package.

The split mirrors the CLI exit-code contract: configuration and model
problems (exit 2) versus numerical failures (exit 3).
"""


class InputError(ValueError):
    """Bad argument: out-of-range index, wrong dimension, invalid option."""


class ModelError(ValueError):
    """The model itself is unusable (e.g. covariance not positive definite)."""


class CapacityError(ModelError):
    """A size cap was exceeded (exact sampler, covariance builder)."""


class SymmetryError(ModelError):
    """A kernel symmetry that the math relies on is violated."""


class SolverError(RuntimeError):
    """Numerical failure in an iterative solver."""

    def __init__(self, message: str, **diagnostics):
        super().__init__(message)
        self.diagnostics = dict(diagnostics)


class NonConvergenceError(SolverError):
    """Iteration budget exhausted before reaching tolerance."""


class DomainEscapeError(SolverError):
    """An iterate left the half-space domain the fixed point lives in."""
