"""Structured approximations of the gradient second moment, the optimizers
they induce, and a small benchmark harness around them."""

from . import cli, fim, harness, matlib, optim
from .errors import (
    ConfigError,
    ConvergenceWarning,
    DimensionError,
    DivergenceError,
    FimoptError,
    NumericError,
    PositivityError,
    PreconditionError,
    SizeGuardError,
)

__version__ = "0.1.0"

__all__ = [
    "cli",
    "fim",
    "harness",
    "matlib",
    "optim",
    "ConfigError",
    "ConvergenceWarning",
    "DimensionError",
    "DivergenceError",
    "FimoptError",
    "NumericError",
    "PositivityError",
    "PreconditionError",
    "SizeGuardError",
    "__version__",
]
