"""Numerical laboratory for weakly subcritical multitype branching processes in iid environments."""

__version__ = "0.1.0"

from .cocycle import (PositiveMatrix, ProjectivePoint, SBMatrix, contraction_coeff, hilbert_distance,
                      product_chain, project_act)
from .environment import EnvironmentLaw, check_conditions, preset
from .spectral import (CriticalPoint, RegimeError, SpectralConvergenceError, SpectralSolver,
                       find_theta_star, lambda_mc)
from .streams import StreamFactory

__all__ = [
    "__version__", "PositiveMatrix", "ProjectivePoint", "SBMatrix", "contraction_coeff",
    "hilbert_distance", "product_chain", "project_act", "EnvironmentLaw", "check_conditions",
    "preset", "CriticalPoint", "RegimeError", "SpectralConvergenceError", "SpectralSolver",
    "find_theta_star", "lambda_mc", "StreamFactory",
]
