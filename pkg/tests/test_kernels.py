from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memflow.errors import GridMismatch, NoDecay, SingularPoint
from memflow.kernels import (
    NOT_EXPONENTIAL,
    AgeGrid,
    DoiEdwards,
    MultiModeMaxwell,
    PowerLaw,
    SingleExponential,
    _grid_from_nodes,
    build_age_grid,
    decay_envelope,
    evaluate_m,
    graded_nodes,
    kernel_integral,
    truncation_age,
)


@pytest.fixture(scope="module")
def exp_grid():
    k = SingleExponential()
    return k, build_age_grid(k, 1e-8, 1e-6)


def test_single_exponential_values():
    k = SingleExponential(2.0)
    assert evaluate_m(k, 0.0) == pytest.approx(0.5)
    assert evaluate_m(k, 2.0) == pytest.approx(0.5 * math.exp(-1.0))
    assert k.raw_mass == pytest.approx(1.0)


def test_multimode_is_renormalised():
    k = MultiModeMaxwell((1.0, 1.0), (1.0, 2.0))
    # raw m(0) = 1 + 1/4, raw mass = 1 + 1/2
    assert k.raw_mass == pytest.approx(1.5)
    assert evaluate_m(k, 0.0) == pytest.approx(1.25 / 1.5)


def test_doi_edwards_singular_at_origin():
    with pytest.raises(SingularPoint):
        evaluate_m(DoiEdwards(), 0.0)


def test_doi_edwards_series_mass():
    k = DoiEdwards(1.0, 10_000)
    # sum_{k<K} 8/pi^2 (2k+1)^-2 -> 1
    assert abs(k.raw_mass - 1.0) <= 1e-4
    assert 1.0 - k.raw_mass <= k.series_tail_bound


def test_power_law_cutoff():
    k = PowerLaw((1.0,), (0.5,), (1.0,), s_min=1e-2)
    assert evaluate_m(k, 5e-3) == 0.0
    assert evaluate_m(k, 2e-2) > 0
    assert k.tail(k.s_min) == pytest.approx(1.0)


def test_invalid_parameters():
    with pytest.raises(ValueError):
        SingleExponential(-1.0)
    with pytest.raises(ValueError):
        MultiModeMaxwell((1.0,), (1.0, 2.0))
    with pytest.raises(ValueError):
        PowerLaw((1.0,), (1.5,), (1.0,))


def test_truncation_age_single_exponential():
    assert truncation_age(SingleExponential(), 1e-8) == pytest.approx(math.log(1e8), rel=1e-10)


def test_doi_edwards_truncation_from_dominant_mode():
    k = DoiEdwards()
    s_max = truncation_age(k, 1e-8)
    # leading amplitude after renormalisation
    c = 8.0 / (math.pi**2 * k.raw_mass)
    assert s_max <= math.log(c / 1e-8) * (1 + 1e-12)


def test_power_law_has_no_decay():
    with pytest.raises(NoDecay):
        build_age_grid(PowerLaw(), 1e-8, 1e-4)


def test_power_law_fast_decay_builds():
    k = PowerLaw((1.0,), (0.9,), (1.0,), s_min=1e-2)
    g = build_age_grid(k, tail_tol=1e-4, quad_tol=1e-3)
    assert g.s_max == pytest.approx(1e-2 * 1e4 ** (1 / 0.9), rel=1e-8)
    assert g.mass_error <= 1e-3


def test_tail_tolerance_above_quadrature_tolerance():
    with pytest.raises(ValueError):
        build_age_grid(SingleExponential(), tail_tol=1e-2, quad_tol=1e-4)


def test_envelopes():
    assert decay_envelope(SingleExponential()).c == pytest.approx(1.0)
    assert decay_envelope(SingleExponential()).alpha == pytest.approx(1.0)
    assert decay_envelope(MultiModeMaxwell((1.0, 1.0), (1.0, 2.0))).alpha == pytest.approx(0.5)
    assert decay_envelope(DoiEdwards(2.0)).alpha == pytest.approx(0.5)
    assert decay_envelope(PowerLaw()) is NOT_EXPONENTIAL


@pytest.mark.parametrize(
    "kernel",
    [SingleExponential(), SingleExponential(0.3), MultiModeMaxwell((1.0, 0.5), (1.0, 2.0)), DoiEdwards()],
    ids=["exp", "exp-0.3", "multimode", "doi-edwards"],
)
@pytest.mark.parametrize("quad_tol", [1e-4, 1e-6])
def test_grid_unit_mass(kernel, quad_tol):
    g = build_age_grid(kernel, 1e-8, quad_tol)
    assert g.mass_error <= quad_tol
    m = g.kernel_weights[1:] / g.weights[1:]
    assert np.all(m > 0)


@pytest.mark.parametrize("kernel", [SingleExponential(), MultiModeMaxwell((1.0, 0.5), (1.0, 2.0)), DoiEdwards()])
def test_kernel_monotone_on_nodes(kernel):
    g = build_age_grid(kernel, 1e-8, 1e-4)
    vals = evaluate_m(kernel, g.nodes[1:])
    assert np.all(np.diff(vals) <= 0)


def test_gamma_moments(exp_grid):
    k, g = exp_grid
    assert kernel_integral(k, g, np.zeros(g.size)) == 0.0
    assert kernel_integral(k, g, g.nodes) == pytest.approx(1.0, abs=1e-5)
    assert kernel_integral(k, g, g.nodes**2) == pytest.approx(2.0, abs=1e-4)


def test_kernel_integral_shape_mismatch(exp_grid):
    k, g = exp_grid
    with pytest.raises(GridMismatch):
        kernel_integral(k, g, np.ones(g.size - 1))


def test_kernel_integral_kernel_mismatch(exp_grid):
    _, g = exp_grid
    with pytest.raises(GridMismatch):
        kernel_integral(DoiEdwards(), g, np.ones(g.size))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=2), st.floats(-3, 3))
def test_kernel_integral_is_linear(coeffs, scale):
    k = SingleExponential()
    g = AgeGrid.uniform(18.0, 200, k)
    a = np.sin(g.nodes) * coeffs[0]
    b = np.cos(g.nodes) * coeffs[1]
    lhs = kernel_integral(k, g, a + scale * b)
    rhs = kernel_integral(k, g, a) + scale * kernel_integral(k, g, b)
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_doi_edwards_refinement_halves_error():
    k = DoiEdwards()
    s_max = truncation_age(k, 1e-8)
    errors = []
    for r in (1.2, 1.1, 1.05):
        h_cap = s_max / 64 * (r - 1.0) / 0.2
        g = _grid_from_nodes(graded_nodes(s_max, 1e-6 * s_max, r, h_cap), k, "geometric")
        errors.append(abs(g.mass - (1.0 - k.tail(s_max))))
    assert errors[0] / errors[1] >= 2.0
    assert errors[1] / errors[2] >= 2.0


def test_graded_nodes_geometric():
    nodes = graded_nodes(10.0, 1e-3, 1.5, 1.0)
    assert nodes[0] == 0.0 and nodes[-1] == 10.0
    h = np.diff(nodes)
    assert np.all(h <= 1.0 + 1e-12)
    np.testing.assert_allclose(nodes[2] / nodes[1], 1.5)


def test_uniform_grid_without_kernel():
    g = AgeGrid.uniform(2.0, 4)
    np.testing.assert_allclose(g.nodes, [0, 0.5, 1.0, 1.5, 2.0])
    np.testing.assert_allclose(g.weights, [0.25, 0.5, 0.5, 0.5, 0.25])
