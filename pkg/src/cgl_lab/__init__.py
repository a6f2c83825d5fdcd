"""Controllability and mixing experiments for the complex Ginzburg-Landau equation on the torus."""

from .dynamics import CglParams, ControlSchedule, ControlSegment, SolverOptions, Trajectory, solve
from .errors import BlowUp, CglLabError, ConfigInvalid, NumericalFailure, ValidationError
from .saturation import FrequencySet, chain_linear, chain_nonlinear, is_generator
from .spectral import BumpProfile, LocalizationMask, SpectralField, TorusGrid, make_grid, make_mask

__version__ = "0.1.0"

__all__ = [
    "BlowUp",
    "BumpProfile",
    "CglLabError",
    "CglParams",
    "ConfigInvalid",
    "ControlSchedule",
    "ControlSegment",
    "FrequencySet",
    "LocalizationMask",
    "NumericalFailure",
    "SolverOptions",
    "SpectralField",
    "TorusGrid",
    "Trajectory",
    "ValidationError",
    "chain_linear",
    "chain_nonlinear",
    "is_generator",
    "make_grid",
    "make_mask",
    "solve",
]
