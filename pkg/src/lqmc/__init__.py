"""Numerical laboratory for Liouville measures on the round sphere.

Modules
-------
geometry   round metric, exact Green function, polar quadrature
field      circle-average covariance and exact Gaussian samplers
chaos      multiplicative chaos cell measures and moment estimators
liouville  insertion parameters, Seiberg checks, correlation estimators
puncture   cusp-insertion machinery: partitions, tilted measures, ratios
mc         seeded parallel Monte Carlo engine and fit statistics
cli        batch experiment runner (``lqmc run <config>``)
"""

from .geometry import green_round, metric_density
from .mc import EstimatorResult, SeedPlan

__all__ = [
    "green_round",
    "metric_density",
    "EstimatorResult",
    "SeedPlan",
]
