from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memflow.deformation import AgeTimeField
from memflow.errors import BoundViolated, GridMismatch, SingularTensor
from memflow.grid import CellGrid
from memflow.kernels import AgeGrid, DoiEdwards, SingleExponential, build_age_grid
from memflow.strain import KBKZ, LCM, PSM, UCM, Currie, PSMNorm, Wagner
from memflow.stress import (
    StressField,
    assemble_grad_tau,
    assemble_tau,
    stress_bound_report,
    strain_samples,
)
from memflow.tensor import norm2, random_unimodular

EXP = SingleExponential()
EXP_GRID = build_age_grid(EXP, 1e-10, 1e-8)


def steady_shear_field(grid, we, rate):
    g = np.broadcast_to(np.eye(2), (grid.size, 1, 2, 2)).copy()
    g[:, 0, 1, 0] = we * grid.nodes * rate
    return AgeTimeField(grid, g, we)


# manufactured field: G = I + (1 - e^{-s}) P(x), P smooth in x
def _p(x):
    x1, x2 = x[:, 0], x[:, 1]
    p = np.empty((len(x), 2, 2))
    p[:, 0, 0] = 0.2 * np.sin(2 * np.pi * x1) * np.cos(np.pi * x2)
    p[:, 0, 1] = 0.3 * np.cos(2 * np.pi * x1 + 0.4)
    p[:, 1, 0] = 0.25 * np.sin(np.pi * x2) + 0.1 * x1
    p[:, 1, 1] = -0.15 * np.cos(np.pi * x1 * x2)
    return p


def _dp(x):
    x1, x2 = x[:, 0], x[:, 1]
    dp = np.zeros((len(x), 2, 2, 2))  # [c, i, l, m]
    dp[:, 0, 0, 0] = 0.4 * np.pi * np.cos(2 * np.pi * x1) * np.cos(np.pi * x2)
    dp[:, 1, 0, 0] = -0.2 * np.pi * np.sin(2 * np.pi * x1) * np.sin(np.pi * x2)
    dp[:, 0, 0, 1] = -0.6 * np.pi * np.sin(2 * np.pi * x1 + 0.4)
    dp[:, 1, 1, 0] = 0.25 * np.pi * np.cos(np.pi * x2)
    dp[:, 0, 1, 0] = 0.1
    dp[:, 0, 1, 1] = 0.15 * np.pi * x2 * np.sin(np.pi * x1 * x2)
    dp[:, 1, 1, 1] = 0.15 * np.pi * x1 * np.sin(np.pi * x1 * x2)
    return dp


def manufactured(grid, x, we=1.0):
    ramp = (1 - np.exp(-grid.nodes))[:, None, None, None]
    mesh = CellGrid(len(x) // 2, 2)
    g = np.eye(2) + ramp * _p(x)[None]
    grad = ramp[..., None] * _dp(x)[None]
    return AgeTimeField(grid, g, we, mesh), grad


@pytest.mark.parametrize("measure", [UCM(), LCM(), PSM(), Currie(), Wagner()])
def test_quiescent_field_gives_zero_or_isotropic(measure):
    f = AgeTimeField.initial(EXP_GRID, 1.0, 2)
    tau = assemble_tau(f, EXP, EXP_GRID, measure, 0.5, 1.0).tau
    expected = (0.5 * EXP_GRID.mass) * measure.evaluate(np.eye(2))
    np.testing.assert_allclose(tau[0], expected, atol=1e-15)
    if isinstance(measure, (UCM, LCM)):
        assert np.all(tau == 0.0)


@pytest.mark.parametrize("we,rate,omega", [(1.0, 1.0, 0.5), (2.0, 0.3, 0.1), (0.5, 3.0, 0.9)])
def test_steady_shear_ucm_closed_form(we, rate, omega):
    f = steady_shear_field(EXP_GRID, we, rate)
    tau = assemble_tau(f, EXP, EXP_GRID, UCM(), omega, we).tau[0]
    assert tau[0, 1] == pytest.approx(omega * rate, rel=1e-6)
    assert tau[0, 0] - tau[1, 1] == pytest.approx(2 * omega * we * rate**2, rel=1e-6)
    assert tau[1, 1] == 0.0


def test_doi_edwards_steady_shear_series():
    kern = DoiEdwards(1.0, 2000)
    grid = build_age_grid(kern, 1e-8, 1e-6)
    f = steady_shear_field(grid, 1.0, 1.0)
    tau = assemble_tau(f, kern, grid, UCM(), 0.5, 1.0).tau[0]
    odd = 2.0 * np.arange(kern.truncation) + 1.0
    series = 0.5 * np.sum(8.0 / math.pi**2 / odd**4)
    assert tau[0, 1] == pytest.approx(series, abs=1e-4)
    # truncated tail is O(K^-3)
    assert series == pytest.approx(0.5 * math.pi**2 / 12, abs=1e-10)


def test_linear_in_samples(rng):
    f = AgeTimeField.initial(EXP_GRID, 1.0, 2)
    s1 = rng.normal(size=(EXP_GRID.size, 1, 2, 2))
    s2 = rng.normal(size=(EXP_GRID.size, 1, 2, 2))
    a = assemble_tau(f, EXP, EXP_GRID, UCM(), 0.3, 1.0, samples=s1).tau
    b = assemble_tau(f, EXP, EXP_GRID, UCM(), 0.3, 1.0, samples=s2).tau
    c = assemble_tau(f, EXP, EXP_GRID, UCM(), 0.3, 1.0, samples=s1 + s2).tau
    np.testing.assert_allclose(c, a + b, atol=1e-12)


def test_kernel_mass_consistency():
    k = np.array([[1.0, -2.0], [0.5, 3.0]])
    grid = build_age_grid(EXP, 1e-8, 1e-6)
    f = AgeTimeField.initial(grid, 2.0, 2)
    samples = np.broadcast_to(k, (grid.size, 1, 2, 2))
    tau = assemble_tau(f, EXP, grid, UCM(), 0.4, 2.0, samples=samples).tau[0]
    np.testing.assert_allclose(tau, 0.2 * k, atol=0.2 * 4 * 1e-6)


@pytest.mark.parametrize(
    "measure", [UCM(), LCM(), PSM(), PSMNorm(), Wagner(), Currie(), KBKZ(("psm", 4.0, 1.0), ("constant", 0.3))]
)
def test_symmetry_preserved(measure, rng):
    grid = AgeGrid.uniform(5.0, 50, EXP)
    g = random_unimodular(rng, grid.size * 6, 2).reshape(grid.size, 6, 2, 2)
    g[0] = np.eye(2)
    f = AgeTimeField(grid, g, 1.0, CellGrid(3, 2))
    tau = assemble_tau(f, EXP, grid, measure, 0.5, 1.0).tau
    np.testing.assert_allclose(tau, np.swapaxes(tau, -1, -2), atol=1e-14)


@given(st.floats(1e-3, 0.49))
@settings(max_examples=25, deadline=None)
def test_omega_linearity_exact(omega):
    f, _ = manufactured(EXP_GRID, np.random.default_rng(1).uniform(size=(4, 2)))
    a = assemble_tau(f, EXP, EXP_GRID, PSMNorm(), omega, 1.0).tau
    b = assemble_tau(f, EXP, EXP_GRID, PSMNorm(), 2 * omega, 1.0).tau
    np.testing.assert_allclose(b, 2 * a, rtol=1e-12, atol=0)


def test_grid_mismatch_detected():
    f = AgeTimeField.initial(AgeGrid.uniform(5.0, 50, EXP), 1.0, 2)
    with pytest.raises(GridMismatch):
        assemble_tau(f, EXP, AgeGrid.uniform(5.0, 40, EXP), UCM(), 0.5, 1.0)
    with pytest.raises(GridMismatch):
        assemble_tau(AgeTimeField.initial(EXP_GRID, 1.0, 2), DoiEdwards(), EXP_GRID, UCM(), 0.5, 1.0)


def test_singular_location_reported():
    grid = AgeGrid.uniform(5.0, 10, EXP)
    f = AgeTimeField.initial(grid, 1.0, 2, CellGrid(2, 2))
    f.values[4, 3] = np.array([[1.0, 2.0], [0.5, 1.0]])
    with pytest.raises(SingularTensor) as info:
        strain_samples(f, LCM())
    assert "age node 4" in str(info.value.location) and "cell 3" in str(info.value.location)


def test_grad_tau_zero_for_uniform_field():
    mesh = CellGrid(3, 4)
    grid = AgeGrid.uniform(5.0, 20, EXP)
    g = np.eye(2) + np.linspace(0, 1, grid.size)[:, None, None, None] * np.array([[0.0, 0.0], [1.0, 0.0]])
    f = AgeTimeField(grid, np.broadcast_to(g, (grid.size, mesh.ncells, 2, 2)).copy(), 1.0, mesh)
    gt = assemble_grad_tau(f, f.spatial_gradient(), EXP, grid, UCM(), 0.5, 1.0)
    # one-sided wall stencils cancel only to round-off
    assert np.abs(gt).max() < 1e-15


def _fd_grad_tau(grid, x, measure, omega, h):
    out = np.zeros((len(x), 2, 2, 2))
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        fp, _ = manufactured(grid, x + e)
        fm, _ = manufactured(grid, x - e)
        tp = assemble_tau(fp, EXP, grid, measure, omega, 1.0).tau
        tm = assemble_tau(fm, EXP, grid, measure, omega, 1.0).tau
        out[:, i] = (tp - tm) / (2 * h)
    return out


@pytest.mark.parametrize("measure", [UCM(), PSMNorm(), LCM()])
def test_grad_tau_matches_finite_differences(measure):
    x = np.random.default_rng(7).uniform(size=(8, 2))
    f, grad = manufactured(EXP_GRID, x)
    formula = assemble_grad_tau(f, grad, EXP, EXP_GRID, measure, 0.5, 1.0)
    fd = _fd_grad_tau(EXP_GRID, x, measure, 0.5, 1e-5)
    assert np.abs(formula - fd).max() / np.abs(fd).max() <= 1e-5


def test_grad_tau_small_shear_ucm():
    # G(x) = I + x1 eps E21 (age-weighted): FD on the mesh agrees to O(eps^2 + dx^2)
    mesh = CellGrid(16, 4)
    grid = AgeGrid.uniform(20.0, 200, EXP)
    x1 = mesh.flat_centers()[:, 0]
    eps = 1e-3
    g = np.broadcast_to(np.eye(2), (grid.size, mesh.ncells, 2, 2)).copy()
    g[:, :, 1, 0] = eps * np.sin(2 * np.pi * x1)[None] * grid.nodes[:, None]
    f = AgeTimeField(grid, g, 1.0, mesh)
    formula = assemble_grad_tau(f, f.spatial_gradient(), EXP, grid, UCM(), 0.5, 1.0)
    tau = assemble_tau(f, EXP, grid, UCM(), 0.5, 1.0).tau
    fd = mesh.gradient(tau)
    assert np.abs(formula - fd).max() <= eps**2 + 2 * mesh.dx**2 * eps * 40


def test_bound_report_quiescent():
    f = AgeTimeField.initial(EXP_GRID, 1.0, 2)
    stress = assemble_tau(f, EXP, EXP_GRID, UCM(), 0.5, 1.0)
    rep = stress_bound_report(stress, UCM(), f)
    assert rep.max_tau == 0.0 and rep.tau_bound == 0.0 and rep.ok


def test_bound_report_steady_shear():
    f = steady_shear_field(EXP_GRID, 1.0, 1.0)
    stress = assemble_tau(f, EXP, EXP_GRID, UCM(), 0.5, 1.0)
    rep = stress_bound_report(stress, UCM(), f)
    assert rep.s0 >= 1.0 * EXP_GRID.nodes[-1]
    assert stress.tau[0, 0, 1] <= rep.tau_bound


def test_bound_report_psm_norm_bounded_by_prefactor(rng):
    grid = AgeGrid.uniform(10.0, 40, EXP)
    mesh = CellGrid(4, 4)
    g = 3.0 * rng.normal(size=(grid.size, mesh.ncells, 2, 2))
    f = AgeTimeField(grid, g, 2.0, mesh)
    grad = rng.normal(size=(grid.size, mesh.ncells, 2, 2, 2))
    stress = assemble_tau(f, EXP, grid, PSMNorm(), 0.6, 2.0)
    stress.grad_tau = assemble_grad_tau(f, grad, EXP, grid, PSMNorm(), 0.6, 2.0)
    rep = stress_bound_report(stress, PSMNorm(), f, grad)
    assert rep.ok
    assert rep.max_tau <= 0.3 * rep.mass
    assert rep.max_grad_tau <= rep.grad_tau_bound


def test_bound_violation_raises():
    f = steady_shear_field(EXP_GRID, 1.0, 1.0)
    stress = assemble_tau(f, EXP, EXP_GRID, UCM(), 0.5, 1.0)
    forged = StressField(stress.tau * 1e6, 0.5, 1.0)
    with pytest.raises(BoundViolated) as info:
        stress_bound_report(forged, UCM(), f)
    assert info.value.witness.max_tau > info.value.witness.tau_bound
    assert not stress_bound_report(forged, UCM(), f, raise_on_violation=False).ok
    assert float(np.max(norm2(stress.tau))) > 0
