"""boltzlab: numerical laboratory for the driven-lattice linear Boltzmann equation.

Builds the jump-rate kernel of a lattice particle weakly coupled to thermal
Bose reservoirs, assembles the momentum-space generator, and extracts steady
states, spectral gaps, drift velocity, and diffusion tensors by spectral,
Green-Kubo, and Monte Carlo routes, including the Einstein-relation
cross-check and the second-order fiber (kinetic-limit) diagnostics.
"""

from .generator import KineticModel
from .lattice import DispersionLaw, MomentumGrid
from .reservoir import FormFactor, ReservoirSpec, SpectralDensity

__all__ = [
    "DispersionLaw",
    "FormFactor",
    "KineticModel",
    "MomentumGrid",
    "ReservoirSpec",
    "SpectralDensity",
]

__version__ = "0.1.0"
