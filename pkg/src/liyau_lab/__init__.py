"""Discrete manifolds, semilinear heat flows and Li-Yau type monitors.

Modules:

* ``geometry``     discrete Laplace-Beltrami operators, curvature, identities
* ``exponents``    critical exponents p_S, p_B, p_F and p_star
* ``feasibility``  admissible (beta, gamma, alpha) for the Li-Yau quantity
* ``heatflow``     time stepping, blow-up detection, comparison checks
* ``harnack``      rho = |grad log u|^2 - gamma (log u)_t + beta u^(p-1) monitors
* ``steady``       sign-changing steady states by constrained minimisation
* ``cli``          experiment configs and reports
"""
from .exponents import exponent_table, star_exponent
from .feasibility import HarnackParams, InfeasibleError, find_params
from .geometry import build_manifold, conformal_torus, flat_torus, icosphere

__version__ = "0.1.0"

__all__ = [
    "build_manifold",
    "conformal_torus",
    "exponent_table",
    "find_params",
    "flat_torus",
    "HarnackParams",
    "icosphere",
    "InfeasibleError",
    "star_exponent",
]
