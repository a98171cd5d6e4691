"""Uniform cell-centred 2D grids used for labels and sampled fields."""
from dataclasses import dataclass

import numpy as np

from .exceptions import GridMismatchError


@dataclass(frozen=True)
class UniformGrid:
    """Cell-centred grid: node (i, j) sits at origin + (j + 1/2, i + 1/2) * spacing.

    ``shape`` is (ny, nx); points are returned row-major with x varying fastest.
    """

    origin: tuple
    spacing: float
    shape: tuple

    def __post_init__(self):
        if not self.spacing > 0:
            raise ValueError("grid spacing must be positive")
        if len(self.shape) != 2 or min(self.shape) < 1:
            raise ValueError("grid shape must be two positive integers")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        object.__setattr__(self, "shape", (int(self.shape[0]), int(self.shape[1])))

    @classmethod
    def covering_box(cls, lo, hi, spacing):
        """Smallest grid of the given spacing whose cells cover [lo, hi]."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        n = np.maximum(np.ceil((hi - lo) / spacing - 1e-9).astype(int), 1)
        centre = 0.5 * (lo + hi)
        origin = centre - 0.5 * n * spacing
        return cls((origin[0], origin[1]), spacing, (int(n[1]), int(n[0])))

    @classmethod
    def covering_ball(cls, center, radius, spacing):
        c = np.asarray(center, dtype=float)
        return cls.covering_box(c - radius, c + radius, spacing)

    @property
    def cell_area(self):
        return self.spacing * self.spacing

    @property
    def size(self):
        return self.shape[0] * self.shape[1]

    def axes(self):
        ny, nx = self.shape
        xs = self.origin[0] + (np.arange(nx) + 0.5) * self.spacing
        ys = self.origin[1] + (np.arange(ny) + 0.5) * self.spacing
        return xs, ys

    @property
    def points(self):
        xs, ys = self.axes()
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack([gx.ravel(), gy.ravel()])

    def bounds(self):
        ny, nx = self.shape
        lo = np.array(self.origin)
        return lo, lo + self.spacing * np.array([nx, ny])

    def ball_mask(self, radius, center=None):
        p = self.points - (0.0 if center is None else np.asarray(center, dtype=float))
        return np.einsum("ij,ij->i", p, p) < radius * radius

    def check_same(self, other):
        if other != self:
            raise GridMismatchError(f"grids differ: {self} vs {other}")
