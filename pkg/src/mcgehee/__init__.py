"""Regularised Hamiltonian flow for attractive homogeneous potentials.

U_n(q) = Z ||q||^(-2(1-1/n)) in dimension d >= 2: integration through
collision via an n-fold covering, the regularising chart (T, H; B, A),
and numerical verification of its canonical structure.
"""

from .model import (
    AngularMomentum,
    DomainError,
    ModelParams,
    PhasePoint,
    angular_momentum,
    hamiltonian,
    l_squared,
    potential,
    radial_convexity,
    vector_field,
)
from .chart import (
    ChartPoint,
    Collision,
    ExtendedPoint,
    Regular,
    chart_forward,
    chart_inverse,
    global_flow,
    in_U_eps,
    on_S_eps,
    project_to_config,
    r_min,
)

__all__ = [
    "AngularMomentum",
    "ChartPoint",
    "Collision",
    "DomainError",
    "ExtendedPoint",
    "ModelParams",
    "PhasePoint",
    "Regular",
    "angular_momentum",
    "chart_forward",
    "chart_inverse",
    "global_flow",
    "hamiltonian",
    "in_U_eps",
    "l_squared",
    "on_S_eps",
    "potential",
    "project_to_config",
    "r_min",
    "radial_convexity",
    "vector_field",
]

__version__ = "0.1.0"
