"""Model-based accelerated MR thermometry at desk scale.

Bioheat simulation, k-space forward modelling, quadrature uncertainty
propagation, variance-driven readout-line selection, minimum-variance
parameter fusion and refined-model temperature reconstruction.
"""

from mrtherm.errors import ConfigError, DomainError, NumericalError, SolverDivergence

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DomainError",
    "NumericalError",
    "SolverDivergence",
    "__version__",
]
