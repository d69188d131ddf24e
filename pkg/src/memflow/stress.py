"""Integral constitutive law ``tau = (omega/We) int m(s) S(G(s)) ds``.

The quadrature uses the field's own age grid, so the discrete bounds in
:func:`stress_bound_report` are exact algebraic inequalities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .deformation import AgeTimeField
from .errors import BoundViolated, GridMismatch, SingularTensor
from .kernels import AgeGrid, MemoryKernel
from .strain import StrainMeasure
from .tensor import norm2

ROUNDING = 1e-12


@dataclass
class StressField:
    """Cellwise stress with optional gradient ``grad_tau[c, i, j, k] = d_i tau_jk``."""

    tau: np.ndarray
    omega: float
    we: float
    grad_tau: np.ndarray | None = None


def _check(field: AgeTimeField, kernel: MemoryKernel, grid: AgeGrid) -> None:
    if field.grid is not grid and not np.array_equal(field.grid.nodes, grid.nodes):
        raise GridMismatch("field and grid age nodes differ")
    if grid.kernel_name and grid.kernel_name != kernel.variant:
        raise GridMismatch(f"grid built for {grid.kernel_name}, not {kernel.variant}")


def strain_samples(field: AgeTimeField, measure: StrainMeasure) -> np.ndarray:
    """``S(G)`` at every node and cell; singularities carry their location."""
    try:
        return measure.evaluate(field.values)
    except SingularTensor as exc:
        loc = exc.location
        where = f"age node {loc[0]}, cell {loc[1]}" if loc and len(loc) == 2 else "unknown node"
        raise SingularTensor(f"{measure.name}: singular deformation", location=where) from exc


def assemble_tau(
    field: AgeTimeField,
    kernel: MemoryKernel,
    grid: AgeGrid,
    measure: StrainMeasure,
    omega: float,
    we: float,
    samples: np.ndarray | None = None,
) -> StressField:
    """Cellwise ``tau = (omega/We) sum_i q_i S(G(s_i))``.

    Parameters
    ----------
    samples : ndarray, optional
        Precomputed ``S(G)`` values, shape ``(n_ages, n_cells, d, d)``.
    """
    _check(field, kernel, grid)
    s_vals = strain_samples(field, measure) if samples is None else samples
    tau = (omega / we) * np.tensordot(grid.kernel_weights, s_vals, axes=(0, 0))
    return StressField(tau, omega, we)


def assemble_grad_tau(
    field: AgeTimeField,
    grad_g: np.ndarray,
    kernel: MemoryKernel,
    grid: AgeGrid,
    measure: StrainMeasure,
    omega: float,
    we: float,
) -> np.ndarray:
    """Spatial gradient ``d_i tau_jk = (omega/We) sum_s q_s sum_lm d_i G_lm S'_lmjk``.

    Parameters
    ----------
    grad_g : ndarray, shape (n_ages, n_cells, n_dim, d, d)
        Spatial derivatives of ``G``, ``grad_g[s, c, i] = d_i G``.

    Returns
    -------
    ndarray, shape (n_cells, n_dim, d, d)
    """
    _check(field, kernel, grid)
    ds = measure.derivative(field.values)
    contracted = np.einsum("scilm,sclmjk->scijk", grad_g, ds)
    return (omega / we) * np.tensordot(grid.kernel_weights, contracted, axes=(0, 0))


@dataclass
class StressBoundReport:
    """Discrete stress bounds ``|tau| <= (omega/We) S0 M`` and its gradient analogue.

    ``M`` is the absolute quadrature mass ``sum |q_i|`` (one up to the
    quadrature tolerance).
    """

    s0: float
    s1: float
    max_grad_g: float
    mass: float
    max_tau: float
    tau_bound: float
    max_grad_tau: float | None
    grad_tau_bound: float | None

    @property
    def ok(self) -> bool:
        good = self.max_tau <= self.tau_bound * (1 + ROUNDING) + ROUNDING
        if self.max_grad_tau is not None:
            good = good and self.max_grad_tau <= self.grad_tau_bound * (1 + ROUNDING) + ROUNDING
        return good


def stress_bound_report(
    stress: StressField,
    measure: StrainMeasure,
    field: AgeTimeField,
    grad_g: np.ndarray | None = None,
    raise_on_violation: bool = True,
) -> StressBoundReport:
    """Evaluate the cellwise stress bounds on a field.

    Raises
    ------
    BoundViolated
        If either bound fails beyond rounding.
    """
    q = field.grid.kernel_weights
    mass = float(np.sum(np.abs(q)))
    pref = stress.omega / stress.we
    s0 = float(np.max(norm2(measure.evaluate(field.values))))
    max_tau = float(np.max(norm2(stress.tau)))
    s1 = mg = float("nan")
    mgt = gtb = None
    if grad_g is not None and stress.grad_tau is not None:
        from .tensor import norm4

        s1 = float(np.max(norm4(measure.derivative(field.values))))
        mg = float(np.max(np.sqrt(np.sum(grad_g**2, axis=(2, 3, 4)))))
        mgt = float(np.max(np.sqrt(np.sum(stress.grad_tau**2, axis=(1, 2, 3)))))
        gtb = pref * s1 * mg * mass
    report = StressBoundReport(s0, s1, mg, mass, max_tau, pref * s0 * mass, mgt, gtb)
    if raise_on_violation and not report.ok:
        raise BoundViolated("discrete stress bound violated", witness=report)
    return report
