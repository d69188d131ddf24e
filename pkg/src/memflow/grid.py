"""Cell-centred rectangular mesh shared by the transport and flow solvers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CellGrid:
    """``nx x ny`` cells on ``[0, lx] x [0, ly]``.

    Cell ``(i, j)`` has centre ``((i + 1/2) dx, (j + 1/2) dy)`` and flat index
    ``i * ny + j``. The x direction is periodic; y is periodic only when
    ``periodic_y`` is set (otherwise it is bounded by walls).
    """

    nx: int
    ny: int
    lx: float = 1.0
    ly: float = 1.0
    periodic_y: bool = False

    def __post_init__(self):
        if self.nx < 1 or self.ny < 2:
            raise ValueError("need nx >= 1 and ny >= 2")

    @property
    def dx(self) -> float:
        return self.lx / self.nx

    @property
    def dy(self) -> float:
        return self.ly / self.ny

    @property
    def ncells(self) -> int:
        return self.nx * self.ny

    @property
    def area(self) -> float:
        return self.lx * self.ly

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell-centre coordinates as two ``(nx, ny)`` arrays."""
        x = (np.arange(self.nx) + 0.5) * self.dx
        y = (np.arange(self.ny) + 0.5) * self.dy
        return np.meshgrid(x, y, indexing="ij")

    def flat_centers(self) -> np.ndarray:
        x, y = self.centers()
        return np.stack([x.ravel(), y.ravel()], axis=-1)

    def bilinear(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Bilinear stencil on the cell-centre lattice.

        Returns flat indices and weights, each of shape ``(n, 4)``. Points are
        wrapped in periodic directions and clamped to the outermost centres
        at walls.
        """
        fx = points[:, 0] / self.dx - 0.5
        fy = points[:, 1] / self.dy - 0.5
        i0 = np.floor(fx)
        wx = fx - i0
        i0 = i0.astype(int) % self.nx
        i1 = (i0 + 1) % self.nx
        if self.periodic_y:
            j0 = np.floor(fy)
            wy = fy - j0
            j0 = j0.astype(int) % self.ny
            j1 = (j0 + 1) % self.ny
        else:
            fy = np.clip(fy, 0.0, self.ny - 1.0)
            j0 = np.minimum(np.floor(fy).astype(int), self.ny - 2)
            wy = fy - j0
            j1 = j0 + 1
        idx = np.stack([i0 * self.ny + j0, i1 * self.ny + j0, i0 * self.ny + j1, i1 * self.ny + j1], axis=1)
        w = np.stack([(1 - wx) * (1 - wy), wx * (1 - wy), (1 - wx) * wy, wx * wy], axis=1)
        return idx, w

    def bicubic(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Tensor-product cubic Lagrange stencil; indices and weights of shape ``(n, 16)``.

        Periodic directions wrap; at walls the four-point stencil is shifted
        inwards and points are clamped to the outermost centres.
        """
        ix, wx = _cubic_axis(points[:, 0] / self.dx - 0.5, self.nx, periodic=True)
        iy, wy = _cubic_axis(points[:, 1] / self.dy - 0.5, self.ny, periodic=self.periodic_y)
        idx = (ix[:, :, None] * self.ny + iy[:, None, :]).reshape(len(points), 16)
        w = (wx[:, :, None] * wy[:, None, :]).reshape(len(points), 16)
        return idx, w

    def gradient(self, field: np.ndarray) -> np.ndarray:
        """Second-order cell-centre gradient of a field with cells on axis 0.

        ``field`` has shape ``(ncells, ...)``; the result has shape
        ``(ncells, 2, ...)``. One-sided second-order stencils are used next
        to walls.
        """
        f = field.reshape((self.nx, self.ny) + field.shape[1:])
        if self.nx > 1:
            gx = (np.roll(f, -1, axis=0) - np.roll(f, 1, axis=0)) / (2 * self.dx)
        else:
            gx = np.zeros_like(f)
        if self.periodic_y:
            gy = (np.roll(f, -1, axis=1) - np.roll(f, 1, axis=1)) / (2 * self.dy)
        else:
            gy = np.gradient(f, self.dy, axis=1, edge_order=2)
        return np.stack([gx, gy], axis=2).reshape((self.ncells, 2) + field.shape[1:])


def _cubic_axis(f: np.ndarray, n: int, periodic: bool) -> tuple[np.ndarray, np.ndarray]:
    """Four-point Lagrange stencil at fractional lattice coordinates ``f``."""
    if periodic:
        base = np.floor(f).astype(int) - 1
        pts = base[:, None] + np.arange(4)
        idx = pts % n
    else:
        if n < 4:
            raise ValueError("cubic interpolation across walls needs at least 4 cells")
        f = np.clip(f, 0.0, n - 1.0)
        base = np.clip(np.floor(f).astype(int) - 1, 0, n - 4)
        pts = base[:, None] + np.arange(4)
        idx = pts
    w = np.ones(pts.shape)
    for a in range(4):
        for b in range(4):
            if a != b:
                w[:, a] *= (f - pts[:, b]) / (a - b)
    return idx, w
