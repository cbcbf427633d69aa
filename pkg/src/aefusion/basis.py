"""Gaussian kernel basis used to expand every network weight over space."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, StructuralError
from .spatial_domain import SpatialGrid


@dataclass(frozen=True, eq=False)
class KernelBasis:
    """Axis-aligned, unnormalized bivariate Gaussian kernels.

    ``centers`` is ``K x 2``; ``bandwidths`` holds the standard deviations
    ``(sigma_x, sigma_y)``.  ``K = 0`` gives intercept-only weight fields.
    """

    centers: np.ndarray
    bandwidths: tuple

    def __post_init__(self):
        c = np.array(self.centers, dtype=float).reshape(-1, 2)
        bw = tuple(float(b) for b in self.bandwidths)
        if len(bw) != 2 or not (bw[0] > 0 and bw[1] > 0):
            raise ConfigurationError(f"bandwidths must be two positive values, got {bw}")
        if not np.all(np.isfinite(c)):
            raise ConfigurationError("kernel centers must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "bandwidths", bw)

    @property
    def K(self) -> int:
        return self.centers.shape[0]

    @property
    def size(self) -> int:
        """Length of the basis vector including the intercept."""
        return self.K + 1

    def to_config(self) -> dict:
        return {"centers": self.centers.tolist(), "bandwidths": list(self.bandwidths)}


def build_kernel_grid(grid: SpatialGrid, nx: int, ny: int) -> KernelBasis:
    """Place ``nx * ny`` kernels at cell midpoints of the bounding box.

    Bandwidths are the coordinate range divided by (support points + 1).
    """
    if nx < 1 or ny < 1:
        raise ConfigurationError("nx and ny must be at least 1")
    x0, x1, y0, y1 = grid.bounds
    rx, ry = x1 - x0, y1 - y0
    if (rx <= 0 and nx > 1) or (ry <= 0 and ny > 1):
        raise ConfigurationError(
            f"degenerate bounds {grid.bounds} cannot hold a {nx}x{ny} kernel grid")
    if rx <= 0 or ry <= 0:
        # A single row/column of points: any positive bandwidth works along the
        # collapsed axis since every location shares that coordinate.
        rx = rx if rx > 0 else 1.0
        ry = ry if ry > 0 else 1.0
    cx = x0 + (np.arange(nx) + 0.5) * rx / nx if x1 > x0 else np.full(nx, x0)
    cy = y0 + (np.arange(ny) + 0.5) * ry / ny if y1 > y0 else np.full(ny, y0)
    gx, gy = np.meshgrid(cx, cy)
    centers = np.column_stack([gx.ravel(), gy.ravel()])
    return KernelBasis(centers, (rx / (nx + 1), ry / (ny + 1)))


def intercept_only() -> KernelBasis:
    return KernelBasis(np.empty((0, 2)), (1.0, 1.0))


def evaluate_basis(basis: KernelBasis, s) -> np.ndarray:
    """Basis vector ``(1, b_1(s), ..., b_K(s))`` at a single location."""
    x, y = float(s[0]), float(s[1])
    sx, sy = basis.bandwidths
    out = np.empty(basis.size)
    out[0] = 1.0
    for k, (cx, cy) in enumerate(basis.centers, start=1):
        out[k] = np.exp(-0.5 * (((x - cx) / sx) ** 2 + ((y - cy) / sy) ** 2))
    return out


def evaluate_basis_matrix(basis: KernelBasis, grid: SpatialGrid) -> np.ndarray:
    """``n_locations x (K + 1)`` matrix whose rows are ``evaluate_basis``."""
    locs = grid.locations if isinstance(grid, SpatialGrid) else np.asarray(grid, dtype=float)
    if locs.ndim != 2 or locs.shape[1] != 2:
        raise StructuralError("locations must be an (n, 2) array")
    sx, sy = basis.bandwidths
    dx = (locs[:, 0:1] - basis.centers[None, :, 0]) / sx
    dy = (locs[:, 1:2] - basis.centers[None, :, 1]) / sy
    out = np.empty((locs.shape[0], basis.size))
    out[:, 0] = 1.0
    out[:, 1:] = np.exp(-0.5 * (dx * dx + dy * dy))
    out.setflags(write=False)
    return out
