"""Exception and warning types shared across the package."""


class FimoptError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(FimoptError):
    """Shapes or sizes of the inputs are inconsistent."""


class PreconditionError(FimoptError):
    """An input violates a documented precondition (e.g. not orthonormal)."""


class PositivityError(FimoptError):
    """A quantity that must be strictly positive is not."""


class NumericError(FimoptError):
    """Non-finite values or a matrix outside the admissible cone."""


class SizeGuardError(FimoptError):
    """A dense routine was asked to exceed its desk-scale size guard."""


class ConfigError(FimoptError):
    """A run configuration is malformed or incomplete."""


class DivergenceError(FimoptError):
    """Training diverged; carries the step index and the partial record."""

    def __init__(self, step, record=None):
        super().__init__(f"diverged at step {step}")
        self.step = step
        self.record = record


class ConvergenceWarning(UserWarning):
    """An iterative kernel was started outside its guaranteed-convergence regime."""
