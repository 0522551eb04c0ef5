"""Ground states of Delta u + f(u, |x|) = 0 and their stability under the heat flow.

Modules
-------
exponents   critical exponents, Fowler constants, spectrum at the fixed point
potentials  nonlinearity families, Fowler images, hypothesis checks
stationary  ground-state shooting, singular orbit, tail fitting
separation  ordering and phase-plane verifiers
expand      multi-exponential asymptotic expansion engine
parabolic   radial heat-flow solver and stability experiments
cli         configuration-driven pipeline
"""

__version__ = "0.1.0"

from .exponents import ExponentTable, derive_exponents
from .expand import StableSystem, expand_orbit, fowler_expand
from .parabolic import (
    NormSpec,
    RadialField,
    SchemeConfig,
    build_grid,
    evolve,
    glue_profiles,
    run_stability_experiment,
    run_weak_asymptotic_experiment,
    weighted_norm,
)
from .potentials import KParams, PotentialSpec, check_hypotheses
from .separation import (
    verify_coefficient_monotonicity,
    verify_ordering,
    verify_phase_bounds,
    verify_singular_majorant,
)
from .stationary import ALPHA_INFINITY, GroundState, classify_decay, fit_tail, shoot, singular_orbit

__all__ = [
    "ALPHA_INFINITY", "ExponentTable", "GroundState", "KParams", "NormSpec", "PotentialSpec",
    "RadialField", "SchemeConfig", "StableSystem", "build_grid", "check_hypotheses", "classify_decay",
    "derive_exponents", "evolve", "expand_orbit", "fit_tail", "fowler_expand", "glue_profiles",
    "run_stability_experiment", "run_weak_asymptotic_experiment", "shoot", "singular_orbit",
    "verify_coefficient_monotonicity", "verify_ordering", "verify_phase_bounds",
    "verify_singular_majorant", "weighted_norm",
]
