"""Free-transport kinetic equation in convex domains with diffuse walls."""
from .geometry import DomainError, DomainGeometry, make_domain
from .phase_grid import (BoundaryGrid, PhaseDensity, PhaseGrid, StateError,
                         VelocityMeasure, weighted_norm)
from .wall_kernels import DiffuseKernel, make_kernel
from .transfer import (NumericalError, SpectralSeparationError, TransferOperator,
                       BoundaryOperator)
from .resolvent import DivergenceError, Resolvent
from .evolution import (AccuracyError, DecayCurve, DecayFit, FitError, RenewalMarcher,
                        decay_curve, fit_decay_exponent, mc_evolve, sample_mixture)
from .config import ConfigError, ExperimentConfig, parse_config

__version__ = "0.1.0"

__all__ = [
    "DomainError", "DomainGeometry", "make_domain", "BoundaryGrid", "PhaseDensity",
    "PhaseGrid", "StateError", "VelocityMeasure", "weighted_norm", "DiffuseKernel",
    "make_kernel", "NumericalError", "SpectralSeparationError", "TransferOperator",
    "BoundaryOperator", "DivergenceError", "Resolvent", "AccuracyError", "DecayCurve",
    "DecayFit", "FitError", "RenewalMarcher", "decay_curve", "fit_decay_exponent",
    "mc_evolve", "sample_mixture", "ConfigError", "ExperimentConfig", "parse_config",
]
