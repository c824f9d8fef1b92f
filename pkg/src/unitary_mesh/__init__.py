"""Numerical configuration of programmable unitary meshes (MPLC and Clements)."""
from .devices import ClementsDevice, CrosstalkModel, MplcDevice, load_device
from .distances import LossKind, frobenius_loss, loss, phase_insensitive_loss, spectral_loss
from .errors import (
    InvalidArgumentError,
    InvalidDimensionError,
    InvalidParameterError,
    InvariantViolationError,
    NumericalFailure,
    UnitaryMeshError,
    UnsupportedDimensionError,
)
from .gradients import GradientMode, LossObjective, analytic_gradient, approx_gradient, gradient_check
from .linalg import RngStream, haar_random_unitary
from .optimizer import LbfgsConfig, OptimResult, Termination, minimize

__version__ = "0.1.0"

__all__ = [
    "ClementsDevice",
    "CrosstalkModel",
    "GradientMode",
    "InvalidArgumentError",
    "InvalidDimensionError",
    "InvalidParameterError",
    "InvariantViolationError",
    "LbfgsConfig",
    "LossKind",
    "LossObjective",
    "MplcDevice",
    "NumericalFailure",
    "OptimResult",
    "RngStream",
    "Termination",
    "UnitaryMeshError",
    "UnsupportedDimensionError",
    "analytic_gradient",
    "approx_gradient",
    "frobenius_loss",
    "gradient_check",
    "haar_random_unitary",
    "load_device",
    "loss",
    "minimize",
    "phase_insensitive_loss",
    "spectral_loss",
]
