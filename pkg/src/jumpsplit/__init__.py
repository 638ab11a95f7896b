"""Operator-splitting finite-difference pricer for jump-diffusion PIDEs.

The diffusion part is advanced by Crank-Nicolson half-steps.  The jump part
is advanced by the exponential (or its (1,1) Pade approximant) of a discrete
generator that is a Metzler matrix, so each step preserves positivity.
"""

from .grid import Grid, GridError, GridSpec, build_grid, spot_to_x
from .jump_generator import JumpGenerator, StabilityError, build_generator
from .levy_models import (
    DiffusionParams,
    GTSPParams,
    KouParams,
    MertonParams,
    ModelError,
    NoJumps,
    characteristic_exponent,
)
from .reference_pricers import FFTConfig, black_scholes, carr_madan, lewis_price, merton_series
from .time_stepping import PricingProblem, PricingResult, strang_price, two_stage_price

__all__ = [
    "DiffusionParams",
    "FFTConfig",
    "GTSPParams",
    "Grid",
    "GridError",
    "GridSpec",
    "JumpGenerator",
    "KouParams",
    "MertonParams",
    "ModelError",
    "NoJumps",
    "PricingProblem",
    "PricingResult",
    "StabilityError",
    "black_scholes",
    "build_generator",
    "build_grid",
    "carr_madan",
    "characteristic_exponent",
    "lewis_price",
    "merton_series",
    "spot_to_x",
    "strang_price",
    "two_stage_price",
]
