"""Simulation and statistical verification of regime-switching jump diffusions."""

__version__ = "0.1.0"

from .estimate import MCEstimate
from .model import ModelError, ModelSpec, LevyKernelSpec, TestFunction, generator_apply, levy_exponent, validate_model

__all__ = [
    "__version__",
    "MCEstimate",
    "ModelError",
    "ModelSpec",
    "LevyKernelSpec",
    "TestFunction",
    "generator_apply",
    "levy_exponent",
    "validate_model",
]
