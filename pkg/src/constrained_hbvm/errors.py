"""Exception hierarchy shared by the integrator modules."""


class HbvmError(Exception):
    """Base class for every error raised by this package."""


class DegreeOutOfRangeError(HbvmError, ValueError):
    pass


class InvalidConfigurationError(HbvmError, ValueError):
    pass


class NumericalFailureError(HbvmError, ArithmeticError):
    pass


class ShapeMismatchError(HbvmError, ValueError):
    pass


class NotSpdError(HbvmError, ArithmeticError):
    """Cholesky met a non-positive pivot."""


class SingularSystemError(HbvmError, ArithmeticError):
    """LU met a pivot below the relative threshold."""


class RegularityError(HbvmError, ArithmeticError):
    """The constraint Gram matrix is not SPD at the probed state."""


class DerivativeMismatchError(HbvmError, ValueError):
    """A user supplied derivative disagrees with finite differences."""


class GridMismatchError(HbvmError, ValueError):
    pass


class StepFailureError(HbvmError, RuntimeError):
    """The fixed-point iteration did not converge.

    Attributes
    ----------
    h : float
        Timestep of the failing step.
    step_index : int or None
        Index of the failing step within a propagation (set by ``propagate``).
    increment : float
        Last max-norm increment of the iteration.
    iterations : int
        Number of iterations performed.
    """

    def __init__(self, message, *, h, increment, iterations, step_index=None):
        super().__init__(message)
        self.h = h
        self.increment = increment
        self.iterations = iterations
        self.step_index = step_index
