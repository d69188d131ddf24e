from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memflow.grid import CellGrid
from memflow.mac import (
    StokesSolver,
    advection,
    cell_velocity,
    divergence,
    stress_divergence,
    velocity_gradient,
)


def _points(mesh, n, rng):
    return np.stack([rng.uniform(0, mesh.lx, n), rng.uniform(0, mesh.ly, n)], axis=1)


@pytest.mark.parametrize("method", ["bilinear", "bicubic"])
def test_stencil_weights_partition_unity(method, rng):
    mesh = CellGrid(6, 8, 2.0, 1.0)
    idx, w = getattr(mesh, method)(_points(mesh, 500, rng))
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-13)
    assert idx.min() >= 0 and idx.max() < mesh.ncells


def test_bilinear_reproduces_linear_in_y(rng):
    mesh = CellGrid(5, 7)
    y = mesh.flat_centers()[:, 1]
    f = 2.0 - 3.0 * y
    pts = _points(mesh, 300, rng)
    pts[:, 1] = np.clip(pts[:, 1], mesh.dy / 2, mesh.ly - mesh.dy / 2)
    idx, w = mesh.bilinear(pts)
    np.testing.assert_allclose((f[idx] * w).sum(1), 2.0 - 3.0 * pts[:, 1], atol=1e-13)


def test_bicubic_reproduces_cubic_in_y(rng):
    mesh = CellGrid(4, 9)
    y = mesh.flat_centers()[:, 1]
    poly = np.polynomial.Polynomial([0.3, -1.0, 2.0, 1.5])
    pts = _points(mesh, 300, rng)
    pts[:, 1] = np.clip(pts[:, 1], mesh.dy / 2, mesh.ly - mesh.dy / 2)
    idx, w = mesh.bicubic(pts)
    np.testing.assert_allclose((poly(y)[idx] * w).sum(1), poly(pts[:, 1]), atol=1e-12)


def test_bicubic_periodic_x_fourth_order(rng):
    pts = None
    errs = []
    for n in (8, 16, 32):
        mesh = CellGrid(n, 4)
        if pts is None:
            pts = _points(mesh, 400, rng)
        x = mesh.flat_centers()[:, 0]
        idx, w = mesh.bicubic(pts)
        errs.append(np.abs((np.sin(2 * np.pi * x)[idx] * w).sum(1) - np.sin(2 * np.pi * pts[:, 0])).max())
    orders = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all(orders > 3.5)


def test_bicubic_needs_four_wall_cells():
    with pytest.raises(ValueError):
        CellGrid(4, 3).bicubic(np.array([[0.5, 0.5]]))


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5))
@settings(max_examples=30, deadline=None)
def test_gradient_exact_for_quadratic_y(a, b, c):
    mesh = CellGrid(3, 6)
    y = mesh.flat_centers()[:, 1]
    g = mesh.gradient(a + b * y + c * y**2)
    np.testing.assert_allclose(g[:, 1], b + 2 * c * y, atol=1e-10 * (1 + abs(b) + abs(c)))
    np.testing.assert_allclose(g[:, 0], 0.0, atol=1e-12)


def test_invalid_grid():
    with pytest.raises(ValueError):
        CellGrid(2, 1)


@pytest.mark.parametrize("ny", [4, 9, 16])
def test_steady_poiseuille_exact(ny):
    mesh = CellGrid(3, ny, 2.0, 1.5)
    sol = StokesSolver(mesh, nu=0.7)
    f = 1.3
    u, v, p = sol.solve(np.full((3, ny), f), np.zeros((3, ny + 1)))
    y = mesh.centers()[1]
    np.testing.assert_allclose(u, f * y * (mesh.ly - y) / (2 * 0.7), atol=1e-12)
    np.testing.assert_allclose(v, 0.0, atol=1e-12)
    np.testing.assert_allclose(p, 0.0, atol=1e-11)


def test_steady_couette_exact():
    mesh = CellGrid(2, 8)
    sol = StokesSolver(mesh, nu=1.0, u_bottom=0.0, u_top=2.0)
    u, v, _ = sol.solve(np.zeros((2, 8)), np.zeros((2, 9)))
    np.testing.assert_allclose(u, 2.0 * mesh.centers()[1], atol=1e-12)
    k = velocity_gradient(mesh, u, v, 0.0, 2.0)
    np.testing.assert_allclose(k[:, 1, 0], 2.0, atol=1e-11)
    np.testing.assert_allclose(k[:, [0, 0, 1], [0, 1, 1]], 0.0, atol=1e-11)


def test_implicit_step_preserves_divergence_free(rng):
    mesh = CellGrid(8, 8)
    sol = StokesSolver(mesh, nu=1.0, a=10.0)
    ru = rng.normal(size=(8, 8))
    rv = rng.normal(size=(8, 9))
    u, v, p = sol.solve(ru, rv)
    assert np.abs(divergence(mesh, u, v)).max() < 1e-11
    assert abs(p.mean()) < 1e-12
    np.testing.assert_array_equal(v[:, [0, -1]], 0.0)


def test_nonpositive_viscosity_rejected():
    with pytest.raises(ValueError):
        StokesSolver(CellGrid(2, 4), nu=0.0)
    with pytest.raises(ValueError):
        StokesSolver(CellGrid(2, 4, periodic_y=True), nu=1.0)


def test_stress_divergence_linear_shear_stress():
    mesh = CellGrid(3, 6)
    y = mesh.flat_centers()[:, 1]
    tau = np.zeros((mesh.ncells, 2, 2))
    tau[:, 0, 1] = tau[:, 1, 0] = 2.0 * y
    tau[:, 0, 0] = 5.0
    tau[:, 1, 1] = -1.0
    fu, fv = stress_divergence(mesh, tau)
    np.testing.assert_allclose(fu, 2.0, atol=1e-12)
    np.testing.assert_allclose(fv, 0.0, atol=1e-12)


def test_advection_vanishes_for_parallel_shear():
    mesh = CellGrid(4, 6)
    y = mesh.centers()[1]
    u = np.sin(np.pi * y)
    v = np.zeros((4, 7))
    au, av = advection(mesh, u, v)
    np.testing.assert_allclose(au, 0.0, atol=1e-14)
    np.testing.assert_allclose(av, 0.0, atol=1e-14)


def test_cell_velocity_shape_and_average():
    mesh = CellGrid(3, 4)
    u = np.arange(12.0).reshape(3, 4)
    v = np.zeros((3, 5))
    uc = cell_velocity(u, v)
    assert uc.shape == (12, 2)
    np.testing.assert_allclose(uc[:, 0], (0.5 * (u + np.roll(u, -1, axis=0))).ravel())
