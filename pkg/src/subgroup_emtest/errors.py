"""Exception hierarchy shared across the package and mapped to CLI exit codes."""


class EmTestError(Exception):
    """Base class for all package errors."""


class InvalidInputError(EmTestError, ValueError):
    """Input data or arguments violate a documented precondition."""


class SingularFitError(EmTestError):
    """Weighted design matrix is rank deficient on the support of the weights."""


class SeparationError(EmTestError):
    """IRLS coefficients diverged (quasi-complete separation)."""


class DegenerateLikelihoodError(EmTestError):
    """Mixture density underflowed to zero at some observation."""


class DegenerateComponentError(EmTestError):
    """Every EM restart collapsed a component weight onto the floor.

    ``best_fit`` carries the best non-degenerate fit when one exists.
    """

    def __init__(self, message, best_fit=None):
        super().__init__(message)
        self.best_fit = best_fit


class DegeneratePartitionError(EmTestError):
    """Two null components share the same coefficient sum, so an interval is empty."""


class ConvergenceError(EmTestError):
    """An iterative solver exceeded its iteration cap."""


class NumericalError(EmTestError):
    """A computed quantity is not finite."""
