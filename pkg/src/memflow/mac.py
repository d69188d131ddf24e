"""Staggered (MAC) discretisation of a periodic channel.

Layout on an ``nx x ny`` :class:`~memflow.grid.CellGrid` (x periodic, walls at
``y = 0`` and ``y = ly``):

* ``u[i, j]`` lives on the x-face at ``(i dx, (j + 1/2) dy)``, shape ``(nx, ny)``;
* ``v[i, j]`` lives on the y-face at ``((i + 1/2) dx, j dy)``, shape
  ``(nx, ny + 1)``; the wall rows ``j = 0`` and ``j = ny`` are zero;
* ``p[i, j]`` lives at cell centres, shape ``(nx, ny)``.

Tangential wall conditions use the ghost value
``u_g = (8 U_w - 6 u_0 + u_1) / 3``, which is exact for quadratic profiles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .errors import LinearSolveFailure
from .grid import CellGrid


def ghost_rows(u: np.ndarray, u_bottom: float, u_top: float) -> tuple[np.ndarray, np.ndarray]:
    """Ghost values below the first and above the last row (axis 1)."""
    gb = (8.0 * u_bottom - 6.0 * u[:, 0] + u[:, 1]) / 3.0
    gt = (8.0 * u_top - 6.0 * u[:, -1] + u[:, -2]) / 3.0
    return gb, gt


@dataclass
class StokesSolver:
    """Monolithic solver for ``a u - nu Lap u + grad p = rhs``, ``div u = 0``.

    ``a = Re / dt`` for an implicit time step and 0 for a steady solve. The
    pressure has zero mean, enforced with a Lagrange multiplier. The sparse
    LU factorisation is computed once per instance.
    """

    mesh: CellGrid
    nu: float
    a: float = 0.0
    u_bottom: float = 0.0
    u_top: float = 0.0

    def __post_init__(self):
        if self.mesh.periodic_y:
            raise ValueError("MAC channel solver expects walls in y")
        if not self.nu > 0:
            raise ValueError("solvent viscosity must be positive")
        self._build()

    # unknown numbering
    def _iu(self, i, j):
        return (i % self.mesh.nx) * self.mesh.ny + j

    def _iv(self, i, j):  # interior faces j = 1 .. ny-1
        return self.nu_count + (i % self.mesh.nx) * (self.mesh.ny - 1) + (j - 1)

    def _ip(self, i, j):
        return self.nu_count + self.nv_count + (i % self.mesh.nx) * self.mesh.ny + j

    def _build(self) -> None:
        m = self.mesh
        nx, ny, dx, dy = m.nx, m.ny, m.dx, m.dy
        self.nu_count = nx * ny
        self.nv_count = nx * (ny - 1)
        self.np_count = nx * ny
        n = self.nu_count + self.nv_count + self.np_count + 1
        self.size = n
        rows, cols, vals = [], [], []

        def add(r, c, v):
            rows.append(r)
            cols.append(c)
            vals.append(v)

        nu, a = self.nu, self.a
        cx, cy = nu / dx**2, nu / dy**2
        self._ghost_rhs = np.zeros((nx, ny))
        for i in range(nx):
            for j in range(ny):
                r = self._iu(i, j)
                add(r, r, a + 2 * cx + 2 * cy)
                add(r, self._iu(i + 1, j), -cx)
                add(r, self._iu(i - 1, j), -cx)
                if j > 0:
                    add(r, self._iu(i, j - 1), -cy)
                else:  # ghost (8 Ub - 6 u0 + u1)/3
                    add(r, r, 2 * cy)
                    add(r, self._iu(i, 1), -cy / 3)
                    self._ghost_rhs[i, j] += cy * 8 * self.u_bottom / 3
                if j < ny - 1:
                    add(r, self._iu(i, j + 1), -cy)
                else:
                    add(r, r, 2 * cy)
                    add(r, self._iu(i, ny - 2), -cy / 3)
                    self._ghost_rhs[i, j] += cy * 8 * self.u_top / 3
                add(r, self._ip(i, j), 1 / dx)
                add(r, self._ip(i - 1, j), -1 / dx)
        for i in range(nx):
            for j in range(1, ny):
                r = self._iv(i, j)
                add(r, r, a + 2 * cx + 2 * cy)
                add(r, self._iv(i + 1, j), -cx)
                add(r, self._iv(i - 1, j), -cx)
                if j > 1:
                    add(r, self._iv(i, j - 1), -cy)
                if j < ny - 1:
                    add(r, self._iv(i, j + 1), -cy)
                add(r, self._ip(i, j), 1 / dy)
                add(r, self._ip(i, j - 1), -1 / dy)
        lam = n - 1
        for i in range(nx):
            for j in range(ny):
                r = self._ip(i, j)
                add(r, self._iu(i + 1, j), 1 / dx)
                add(r, self._iu(i, j), -1 / dx)
                if j < ny - 1:
                    add(r, self._iv(i, j + 1), 1 / dy)
                if j > 0:
                    add(r, self._iv(i, j), -1 / dy)
                add(r, lam, 1.0)
                add(lam, r, 1.0)
        mat = sparse.csc_matrix((vals, (rows, cols)), shape=(n, n))
        try:
            self._lu = splu(mat)
        except RuntimeError as exc:
            raise LinearSolveFailure(f"Stokes factorisation failed: {exc}") from exc

    def solve(self, rhs_u: np.ndarray, rhs_v: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Solve with face right-hand sides; ``rhs_v`` is given on all y-faces.

        Returns ``(u, v, p)`` with ``v`` including the zero wall rows.
        """
        m = self.mesh
        b = np.zeros(self.size)
        b[: self.nu_count] = (rhs_u + self._ghost_rhs).ravel()
        b[self.nu_count : self.nu_count + self.nv_count] = rhs_v[:, 1:-1].ravel()
        x = self._lu.solve(b)
        if not np.all(np.isfinite(x)):
            raise LinearSolveFailure("Stokes solve produced non-finite values")
        u = x[: self.nu_count].reshape(m.nx, m.ny)
        v = np.zeros((m.nx, m.ny + 1))
        v[:, 1:-1] = x[self.nu_count : self.nu_count + self.nv_count].reshape(m.nx, m.ny - 1)
        p = x[self.nu_count + self.nv_count : -1].reshape(m.nx, m.ny)
        return u, v, p


def divergence(mesh: CellGrid, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return (np.roll(u, -1, axis=0) - u) / mesh.dx + (v[:, 1:] - v[:, :-1]) / mesh.dy


def cell_velocity(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Cell-centre velocity, shape ``(ncells, 2)``."""
    uc = 0.5 * (u + np.roll(u, -1, axis=0))
    vc = 0.5 * (v[:, 1:] + v[:, :-1])
    return np.stack([uc.ravel(), vc.ravel()], axis=-1)


def velocity_gradient(mesh: CellGrid, u: np.ndarray, v: np.ndarray, u_bottom: float = 0.0, u_top: float = 0.0) -> np.ndarray:
    """Cell-centre ``kappa[c, i, j] = d u_j / d x_i``, shape ``(ncells, 2, 2)``."""
    dx, dy = mesh.dx, mesh.dy
    uc = 0.5 * (u + np.roll(u, -1, axis=0))
    vc = 0.5 * (v[:, 1:] + v[:, :-1])
    gb, gt = ghost_rows(uc, u_bottom, u_top)
    ext = np.concatenate([gb[:, None], uc, gt[:, None]], axis=1)
    k = np.empty((mesh.nx, mesh.ny, 2, 2))
    k[..., 0, 0] = (np.roll(u, -1, axis=0) - u) / dx
    k[..., 1, 1] = (v[:, 1:] - v[:, :-1]) / dy
    k[..., 1, 0] = (ext[:, 2:] - ext[:, :-2]) / (2 * dy)
    k[..., 0, 1] = (np.roll(vc, -1, axis=0) - np.roll(vc, 1, axis=0)) / (2 * dx)
    return k.reshape(mesh.ncells, 2, 2)


def stress_divergence(mesh: CellGrid, tau: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(div tau)_j = d_i tau_ij`` on u-faces and y-faces.

    ``tau`` has shape ``(ncells, 2, 2)``. The y-face result includes zero
    wall rows.
    """
    nx, ny, dx, dy = mesh.nx, mesh.ny, mesh.dx, mesh.dy
    t = tau.reshape(nx, ny, 2, 2)
    t00, t11 = t[..., 0, 0], t[..., 1, 1]
    t10 = 0.5 * (t[..., 1, 0] + t[..., 0, 1])
    fu = (t00 - np.roll(t00, 1, axis=0)) / dx
    t10_u = 0.5 * (t10 + np.roll(t10, 1, axis=0))
    fu = fu + np.gradient(t10_u, dy, axis=1, edge_order=2)
    fv = np.zeros((nx, ny + 1))
    t10_v = 0.5 * (t10[:, 1:] + t10[:, :-1])
    fv[:, 1:-1] = (t11[:, 1:] - t11[:, :-1]) / dy + (np.roll(t10_v, -1, axis=0) - np.roll(t10_v, 1, axis=0)) / (2 * dx)
    return fu, fv


def _upwind_periodic(f: np.ndarray, vel: np.ndarray, h: float, axis: int) -> np.ndarray:
    fp1, fp2 = np.roll(f, -1, axis), np.roll(f, -2, axis)
    fm1, fm2 = np.roll(f, 1, axis), np.roll(f, 2, axis)
    back = (3 * f - 4 * fm1 + fm2) / (2 * h)
    fwd = (-3 * f + 4 * fp1 - fp2) / (2 * h)
    return np.where(vel > 0, back, fwd)


def _upwind_wall(f: np.ndarray, vel: np.ndarray, h: float, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Second-order upwind along axis 1 with ghost rows; central next to walls."""
    ext = np.concatenate([lo[:, None], f, hi[:, None]], axis=1)
    central = (ext[:, 2:] - ext[:, :-2]) / (2 * h)
    out = central.copy()
    n = f.shape[1]
    if n >= 4:
        inner = slice(1, n - 1)
        back = (3 * f[:, 2:] - 4 * f[:, 1:-1] + f[:, :-2]) / (2 * h)  # rows 2..n-1
        fwd = (-3 * f[:, :-2] + 4 * f[:, 1:-1] - f[:, 2:]) / (2 * h)  # rows 0..n-3
        b = np.full_like(f, np.nan)
        fw = np.full_like(f, np.nan)
        b[:, 2:] = back
        fw[:, :-2] = fwd
        v = vel[:, inner]
        cand = np.where(v > 0, b[:, inner], fw[:, inner])
        out[:, inner] = np.where(np.isnan(cand), central[:, inner], cand)
    return out


def advection(mesh: CellGrid, u: np.ndarray, v: np.ndarray, u_bottom: float = 0.0, u_top: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Convective term ``(u . grad) u`` on u-faces and y-faces (second-order upwind)."""
    dx, dy = mesh.dx, mesh.dy
    v_at_u = 0.25 * (v[:, :-1] + v[:, 1:] + np.roll(v[:, :-1], 1, axis=0) + np.roll(v[:, 1:], 1, axis=0))
    gb, gt = ghost_rows(u, u_bottom, u_top)
    adv_u = u * _upwind_periodic(u, u, dx, 0) + v_at_u * _upwind_wall(u, v_at_u, dy, gb, gt)
    adv_v = np.zeros_like(v)
    vi = v[:, 1:-1]
    u_at_v = 0.25 * (u[:, :-1] + u[:, 1:] + np.roll(u[:, :-1], -1, axis=0) + np.roll(u[:, 1:], -1, axis=0))
    zeros = np.zeros(mesh.nx)
    adv_v[:, 1:-1] = u_at_v * _upwind_periodic(vi, u_at_v, dx, 0) + vi * _upwind_wall(vi, vi, dy, zeros, zeros)
    return adv_u, adv_v
