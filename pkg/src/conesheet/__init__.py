"""Numerical laboratory for thin conical sheets: energies, ansatz, geodesic polar
coordinates, curvature bookkeeping and Gauss-map lower bounds."""

from .ansatz import ansatz_energy, sample_ansatz
from .energy import EnergyBreakdown, total_energy
from .geometry import ConeParams, Immersion, MetricComponents, NormalField, PolarGrid
from .minimize import OptimizerConfig, minimize

__all__ = [
    "ConeParams",
    "EnergyBreakdown",
    "Immersion",
    "MetricComponents",
    "NormalField",
    "OptimizerConfig",
    "PolarGrid",
    "ansatz_energy",
    "minimize",
    "sample_ansatz",
    "total_energy",
]

__version__ = "0.1.0"
