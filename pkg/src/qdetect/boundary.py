"""Boundary tables and value slices shared by the solvers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

COORD_Y = "Y"
COORD_X = "X"


@dataclass
class BoundaryTable:
    coordinate: str
    grid: np.ndarray
    h: np.ndarray
    penalty: str
    z: float
    solver: str
    tolerance: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.h = np.asarray(self.h, dtype=float)
        if self.grid.shape != self.h.shape or self.grid.ndim != 1:
            raise ValueError("grid and h must be 1-d arrays of equal length")
        if self.grid.size > 1 and np.any(np.diff(self.grid) <= 0):
            raise ValueError("boundary grid must be strictly increasing")

    def __call__(self, v, extrapolate: bool = False):
        """Linear interpolation; outside the grid raise unless ``extrapolate`` (flat)."""
        v = np.asarray(v, dtype=float)
        if not extrapolate and (np.any(v < self.grid[0] - 1e-12) or np.any(v > self.grid[-1] + 1e-12)):
            raise ValueError(f"{self.coordinate}={v} outside table range [{self.grid[0]}, {self.grid[-1]}]")
        out = np.interp(v, self.grid, self.h)
        return float(out) if out.ndim == 0 else out

    def scaled(self, factor: float) -> "BoundaryTable":
        return BoundaryTable(self.coordinate, self.grid.copy(), self.h * factor, self.penalty,
                             self.z, self.solver, self.tolerance, dict(self.meta, scaled=factor))

    def min_height(self) -> float:
        return float(self.h.min())


@dataclass
class ValueSlice:
    y: float
    phi: np.ndarray
    values: np.ndarray
    boundary: float
    name: str = "G"
