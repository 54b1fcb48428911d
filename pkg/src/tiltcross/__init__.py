"""Exponentially small wavepacket transmission through tilted avoided crossings.

A toolkit that evaluates the closed-form superadiabatic transition formula
for one-dimensional two-level crossings with a tilted trace, and validates
it against a high-precision coupled split-step reference solver.
"""

__version__ = "0.1.0"

from . import errors
from .decompose import FitConfig, fit_gaussians
from .formula import (
    MODE_HERMITE,
    MODE_LEADING,
    OFFSET_IN_A01,
    OFFSET_IN_A10,
    OFFSET_IN_NONE,
    VARIANT_FULL,
    VARIANT_SIMPLIFIED,
    AlphaSet,
    OptimalOrder,
    TransitionInputs,
    TransitionResult,
    alpha_coeffs,
    constraint_margin,
    gaussian_double_integral,
    phase_shift,
    select_n0,
    transmitted_gaussian,
    transmitted_hagedorn,
    transmitted_sum,
)
from .packets import (
    GaussianPacket,
    GridState,
    HagedornPacket,
    PacketSum,
    eval_packet,
    normalize,
    packet_norm_sq,
    semiclassical_fourier,
    state_from_packet,
    width_to_c,
)
from .potential import (
    DiabaticPotential,
    StokesData,
    custom_series,
    eval_adiabatic,
    find_complex_zero,
    find_crossing,
    landau_zener,
    local_params,
    natural_scale,
    parametric_tanh,
    stokes_data,
)
from .recursions import (
    CouplingTable,
    GridFunction,
    coupling_coeffs,
    coupling_fourier,
    kappa_asymptotic,
    make_analysis_grid,
    potential_derivative_coeffs,
    transition_point,
)
from .splitstep import (
    SURFACE_COUPLED,
    SURFACE_LINEAR_LOWER,
    SURFACE_LINEAR_UPPER,
    SURFACE_LOWER,
    SURFACE_UPPER,
    PropagatorSpec,
    adiabatic_transform,
    avron_herbst,
    evolve_to_crossing,
    propagate,
)

__all__ = [
    "errors",
    "DiabaticPotential",
    "StokesData",
    "custom_series",
    "eval_adiabatic",
    "find_complex_zero",
    "find_crossing",
    "landau_zener",
    "local_params",
    "natural_scale",
    "parametric_tanh",
    "stokes_data",
    "GaussianPacket",
    "HagedornPacket",
    "PacketSum",
    "GridState",
    "eval_packet",
    "normalize",
    "packet_norm_sq",
    "semiclassical_fourier",
    "state_from_packet",
    "width_to_c",
    "PropagatorSpec",
    "SURFACE_COUPLED",
    "SURFACE_UPPER",
    "SURFACE_LOWER",
    "SURFACE_LINEAR_UPPER",
    "SURFACE_LINEAR_LOWER",
    "propagate",
    "adiabatic_transform",
    "avron_herbst",
    "evolve_to_crossing",
    "TransitionInputs",
    "TransitionResult",
    "OptimalOrder",
    "AlphaSet",
    "VARIANT_FULL",
    "VARIANT_SIMPLIFIED",
    "OFFSET_IN_A10",
    "OFFSET_IN_A01",
    "OFFSET_IN_NONE",
    "MODE_LEADING",
    "MODE_HERMITE",
    "select_n0",
    "alpha_coeffs",
    "constraint_margin",
    "gaussian_double_integral",
    "phase_shift",
    "transmitted_gaussian",
    "transmitted_hagedorn",
    "transmitted_sum",
    "CouplingTable",
    "GridFunction",
    "coupling_coeffs",
    "coupling_fourier",
    "kappa_asymptotic",
    "make_analysis_grid",
    "potential_derivative_coeffs",
    "transition_point",
    "FitConfig",
    "fit_gaussians",
    "__version__",
]
