"""Convolutional nonnegative matrix factorization under the beta-divergence."""

from .baselines import METHODS, STEPS, get_step
from .betadiv import D_beta, d_beta
from .cnmf import (
    FactorizationState,
    FitOptions,
    LossTrace,
    NumericalError,
    fit,
    random_init,
    reconstruct,
    refresh_U_incremental,
    step_proposed,
    update_H,
    update_W,
)
from .nnmat import DimensionError, NmatFormatError

__all__ = [
    "METHODS",
    "STEPS",
    "get_step",
    "D_beta",
    "d_beta",
    "FactorizationState",
    "FitOptions",
    "LossTrace",
    "NumericalError",
    "fit",
    "random_init",
    "reconstruct",
    "refresh_U_incremental",
    "step_proposed",
    "update_H",
    "update_W",
    "DimensionError",
    "NmatFormatError",
]

__version__ = "0.1.0"
