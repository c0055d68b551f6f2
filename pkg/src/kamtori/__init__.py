"""kamtori: quasi-periodic invariant tori of Poisson systems.

Computes embeddings K of n-dimensional tori invariant under generalized
Hamiltonian flows dz/dt = B(z) grad H(z), by a spectral quasi-Newton
iteration on the invariance equation d_omega K = B(K) grad H(K), and
verifies the result both geometrically (identity checks, smallness
certificate) and dynamically (flow conjugacy).
"""

from .fourier import (
    FourierMap,
    Frequency,
    cohomological_solve,
    diophantine_margin,
    russmann_mu,
)
from .systems import PoissonSystem, SYSTEMS, build_system, make_initial_state
from .geometry import TorusState
from .newton import newton_step
from .solver import Schedule, ConstantTracker, run, certificate

__all__ = [
    "FourierMap",
    "Frequency",
    "cohomological_solve",
    "diophantine_margin",
    "russmann_mu",
    "PoissonSystem",
    "SYSTEMS",
    "build_system",
    "make_initial_state",
    "TorusState",
    "newton_step",
    "Schedule",
    "ConstantTracker",
    "run",
    "certificate",
]

__version__ = "0.1.0"
