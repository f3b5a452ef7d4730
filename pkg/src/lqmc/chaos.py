"""Multiplicative chaos measures on cell partitions.

A regularized chaos measure assigns each cell the mass

    eps^{gamma^2/2} * exp(gamma * (X_eps(center) + (Q/2) ln ghat(center))) * area

where X_eps is one circle-average field draw and area is Euclidean.  With
eps tied to the cell size (half the diameter by default) the expected
cell mass is e^{(gamma^2/2)(ln2 - 1/2)} times the round measure of the
cell, up to O(eps^2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .field import FieldSample
from .geometry import log_metric_density
from .mc import MIN_BATCHES, EstimatorResult, batch_stats

__all__ = ["CellSet", "ChaosMeasure", "gmc_cells", "negative_moment"]


@dataclass(eq=False)
class CellSet:
    """Planar partition cells: complex centers, Euclidean areas, radii eps."""

    centers: np.ndarray
    areas: np.ndarray
    eps: np.ndarray | float

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=complex).ravel()
        self.areas = np.asarray(self.areas, dtype=float).ravel()
        if self.centers.size != self.areas.size:
            raise ValueError("one area per cell center required")
        if np.any(self.areas <= 0):
            raise ValueError("cell areas must be positive")

    @property
    def n_cells(self) -> int:
        return self.centers.size


@dataclass(eq=False)
class ChaosMeasure:
    """Discrete positive measure: one nonnegative mass per cell."""

    cells: CellSet
    masses: np.ndarray
    gamma: float
    eps: np.ndarray | float

    def total(self) -> float:
        return float(self.masses.sum())

    def restrict(self, mask) -> float:
        """Total mass of the cells selected by a boolean mask."""
        return float(self.masses[np.asarray(mask, dtype=bool)].sum())


def gmc_cells(field: FieldSample, gamma: float, Q: float, cells: CellSet) -> ChaosMeasure:
    """Chaos cell masses from one field draw at the cell centers."""
    if not 0.0 <= gamma < 2.0:
        raise ValueError(f"gamma must lie in [0, 2), got {gamma}")
    values = np.asarray(field.values, dtype=float)
    if values.shape[-1] != cells.n_cells:
        raise ValueError(
            f"field has {values.shape[-1]} values but the partition has "
            f"{cells.n_cells} cells"
        )
    eps = np.broadcast_to(np.asarray(field.eps, dtype=float), (cells.n_cells,))
    shift = 0.5 * Q * log_metric_density(cells.centers)
    log_mass = (
        0.5 * gamma**2 * np.log(eps)
        + gamma * (values + shift)
        + np.log(cells.areas)
    )
    return ChaosMeasure(cells=cells, masses=np.exp(log_mass), gamma=gamma, eps=field.eps)


def negative_moment(mass_samples, q: float, batches: int = MIN_BATCHES) -> EstimatorResult:
    """Monte Carlo estimate of E[mass^{-q}] with batch-means stderr."""
    if q <= 0:
        raise ValueError("q must be positive")
    samples = np.asarray(mass_samples, dtype=float)
    if np.any(samples <= 0):
        raise ValueError("negative_moment requires strictly positive samples")
    return batch_stats(samples**(-q), batches)
