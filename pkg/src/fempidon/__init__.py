"""FEM Darcy/transport solvers coupled to a physics-informed DeepONet."""

from .errors import ConfigError, FempidonError, NumericalError, SolverError
from .physics import GaussianComponent, PhysParams, SourceMixture

__version__ = "0.1.0"

__all__ = ["ConfigError", "FempidonError", "NumericalError", "SolverError", "GaussianComponent",
           "PhysParams", "SourceMixture"]
