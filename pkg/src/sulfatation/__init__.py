"""Two-scale reaction-diffusion model of concrete sulfatation.

Sulfuric acid ``w1`` and dissolved hydrogen sulfide ``w2`` live in a
microscopic pore cell Y attached to every point of the macroscopic domain
Omega, where gaseous hydrogen sulfide ``w3`` diffuses. Gypsum ``w4`` forms on
the reactive part Gamma_1 of the pore boundary.
"""
from .discrete_ops import build_operators, coupling_residuals
from .grid import TwoScaleGrid, build_two_scale_grid, canonical_grid, line_grid
from .model import BoundaryData, Bounds, KineticSpec, Params, compute_bounds, default_params, validate
from .state import State
from .timestepper import StepFailure, TimeStepper, run, step

__all__ = [
    "BoundaryData", "Bounds", "KineticSpec", "Params", "State", "StepFailure", "TimeStepper",
    "TwoScaleGrid", "build_operators", "build_two_scale_grid", "canonical_grid", "compute_bounds",
    "coupling_residuals", "default_params", "line_grid", "run", "step", "validate",
]
__version__ = "0.1.0"
