"""Stationary solutions by fixed-point iteration.

Restricted to kinematics where the steady age equation
``(1/We) dG/ds = G kappa`` closes pointwise: homogeneous flows and parallel
shear flows in a channel. There ``G(s) = exp(We s kappa)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .deformation import AgeTimeField
from .errors import DivergentStress, GeometryUnsupported, Inadmissible, NotConverged
from .flow import FluidParams
from .grid import CellGrid
from .kernels import NOT_EXPONENTIAL, AgeGrid, MemoryKernel, PowerLaw, decay_envelope
from .mac import StokesSolver, stress_divergence, velocity_gradient
from .strain import StrainMeasure
from .stress import assemble_tau
from .tensor import norm2, tensor_exp


@dataclass(frozen=True)
class HomogeneousStationary:
    """Uniform steady velocity gradient."""

    kappa: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.kappa, dtype=float)
        if abs(np.trace(k)) > 1e-12 * max(1.0, np.abs(k).max()):
            raise ValueError("velocity gradient must be traceless")
        object.__setattr__(self, "kappa", k)


@dataclass(frozen=True)
class ParallelShear:
    """Streamwise flow ``u_1(y)`` between walls at ``y = 0`` and ``y = height``."""

    ny: int
    height: float = 1.0

    @property
    def mesh(self) -> CellGrid:
        return CellGrid(1, self.ny, 1.0, self.height)


@dataclass(frozen=True)
class Smallness:
    """Stand-ins for the constants of the small-data theory."""

    c0: float = 0.5
    r1: float = 0.1
    p: float | None = None
    f_cap: float = 0.1


@dataclass(frozen=True)
class StationaryProblem:
    params: FluidParams
    kernel: MemoryKernel
    grid: AgeGrid
    measure: StrainMeasure
    geometry: object
    forcing: float = 0.0
    smallness: Smallness = Smallness()


@dataclass
class AdmissibilityReport:
    checked: bool
    alpha: float | None
    threshold: float | None
    forcing_norm: float
    note: str = ""


@dataclass
class DivergenceReport:
    """Where and why the stress integral fails to converge."""

    location: int
    growth_rate: float
    alpha: float | None
    note: str


@dataclass
class StationaryResult:
    u: np.ndarray | None
    p: np.ndarray | None
    tau: np.ndarray
    gfield: AgeTimeField
    iterations: int
    changes: list = field(default_factory=list)
    contraction_factors: list = field(default_factory=list)
    admissibility: AdmissibilityReport | None = None

    @property
    def kappa(self) -> np.ndarray | None:
        return getattr(self, "_kappa", None)


def _growth_exponents(measure: StrainMeasure) -> tuple[float, float, float]:
    g = measure.growth
    if g is None:
        return 2.0, 1.0, 1.0
    return g.a, g.b, g.c


def check_admissibility(problem: StationaryProblem) -> AdmissibilityReport:
    """Check the decay/growth condition and the forcing cap.

    The condition is ``alpha > 3 C0 We c p R1`` with ``c = max(a, b + 1)``
    built from the measure's declared growth ``(a, b)``; it is waived when
    ``a = b + 1 = 0``.

    Raises
    ------
    Inadmissible
    """
    sm = problem.smallness
    d = 2
    p = float(d + 1) if sm.p is None else sm.p
    area = problem.geometry.height if isinstance(problem.geometry, ParallelShear) else 1.0
    f_norm = abs(problem.forcing) * area ** (1.0 / p)
    if f_norm > sm.f_cap:
        raise Inadmissible(f"forcing norm {f_norm:.3g} exceeds cap {sm.f_cap}")
    a, b, _ = _growth_exponents(problem.measure)
    c = max(a, b + 1.0)
    if c <= 0:
        return AdmissibilityReport(False, None, None, f_norm, "bounded measure, decay condition waived")
    env = decay_envelope(problem.kernel)
    if env is NOT_EXPONENTIAL:
        raise Inadmissible(f"{problem.kernel.variant} has no exponential envelope but the measure grows")
    threshold = 3.0 * sm.c0 * problem.params.we * c * p * sm.r1
    if not env.alpha > threshold:
        raise Inadmissible(f"decay rate {env.alpha:.4g} does not exceed threshold {threshold:.4g}")
    return AdmissibilityReport(True, env.alpha, threshold, f_norm)


def divergence_check(kappa: np.ndarray, problem: StationaryProblem) -> None:
    """Raise :class:`DivergentStress` when ``int m |S(exp(We s kappa))| ds`` diverges."""
    kappa = np.asarray(kappa, dtype=float).reshape(-1, kappa.shape[-2], kappa.shape[-1])
    a, _, _ = _growth_exponents(problem.measure)
    env = decay_envelope(problem.kernel)
    eig = np.linalg.eigvals(kappa)
    lam = np.max(np.abs(eig.real), axis=-1)  # growth of |G| or of |G^{-1}|
    rate = a * problem.params.we * lam
    if env is NOT_EXPONENTIAL:
        bad = np.nonzero(rate > 0)[0]
        if bad.size:
            k = int(bad[0])
            raise DivergentStress("exponential strain growth against algebraic memory",
                                  DivergenceReport(k, float(rate[k]), None, "algebraic kernel"))
        if isinstance(problem.kernel, PowerLaw) and a > 0:
            nonzero = np.nonzero(np.abs(kappa).max(axis=(1, 2)) > 0)[0]
            if nonzero.size and a >= min(problem.kernel.betas):
                k = int(nonzero[0])
                raise DivergentStress("polynomial strain growth beats algebraic decay",
                                      DivergenceReport(k, float(a), None, "power-law tail"))
        return
    bad = np.nonzero(rate >= env.alpha)[0]
    if bad.size:
        k = int(bad[0])
        raise DivergentStress(
            f"strain growth rate {rate[k]:.4g} >= kernel decay {env.alpha:.4g}",
            DivergenceReport(k, float(rate[k]), env.alpha, "exponential growth"),
        )


def stationary_age_solve(kappa_profile: np.ndarray, we: float, grid: AgeGrid, mesh: CellGrid | None = None) -> AgeTimeField:
    """``G(s, x) = exp(We s kappa(x))`` for every age node and location.

    Parameters
    ----------
    kappa_profile : ndarray, shape (n_cells, d, d) or (d, d)
    """
    k = np.asarray(kappa_profile, dtype=float)
    if k.ndim == 2:
        k = k[None]
    ncell, d = k.shape[0], k.shape[-1]
    expected = 1 if mesh is None else mesh.ncells
    if ncell != expected:
        raise GeometryUnsupported(f"kappa profile has {ncell} cells, mesh has {expected}")
    arg = we * grid.nodes[:, None, None, None] * k[None]
    nilpotent = np.all(np.abs(k @ k) <= 1e-15 * max(1.0, float(np.abs(k).max()) ** 2))
    if nilpotent:
        vals = np.eye(d) + arg
    else:
        vals = tensor_exp(arg.reshape(-1, d, d)).reshape(arg.shape)
    vals[0] = np.eye(d)
    return AgeTimeField(grid, vals, we, mesh, 0.0)


def _apply_map(problem: StationaryProblem, solver: StokesSolver | None, tau_bar: np.ndarray):
    geo = problem.geometry
    we = problem.params.we
    if isinstance(geo, HomogeneousStationary):
        kappa = geo.kappa[None]
        u = p = None
        mesh = None
    else:
        mesh = geo.mesh
        gu = np.full((1, geo.ny), problem.forcing)
        gv = np.zeros((1, geo.ny + 1))
        du, dv = stress_divergence(mesh, tau_bar)
        u, v, p = solver.solve(gu + du, gv + dv)
        kappa = velocity_gradient(mesh, u, v)
    divergence_check(kappa, problem)
    gfield = stationary_age_solve(kappa, we, problem.grid, mesh)
    tau = assemble_tau(gfield, problem.kernel, problem.grid, problem.measure, problem.params.omega, we).tau
    return u, p, tau, gfield, kappa


def stationary_fixed_point(
    problem: StationaryProblem,
    tol: float = 1e-8,
    max_iters: int = 30,
    u_init: np.ndarray | None = None,
    tau_init: np.ndarray | None = None,
) -> StationaryResult:
    """Iterate velocity -> Stokes -> age solve -> stress until the velocity settles.

    The first iterate is ``u_init`` (zero by default) with stress
    ``tau_init``; when ``tau_init`` is omitted and ``u_init`` is given, the
    stress is assembled from ``u_init``. Convergence means two successive
    velocity iterates differ by less than ``tol`` in max norm.

    Raises
    ------
    Inadmissible, DivergentStress, NotConverged
    """
    report = check_admissibility(problem)
    geo = problem.geometry
    we = problem.params.we
    if isinstance(geo, HomogeneousStationary):
        u, p, tau, gfield, kappa = _apply_map(problem, None, None)
        res = StationaryResult(None, None, tau, gfield, 1, [0.0], [], report)
        res._kappa = kappa
        return res
    if not isinstance(geo, ParallelShear):
        raise GeometryUnsupported(f"stationary solver does not handle {type(geo).__name__}")
    mesh = geo.mesh
    solver = StokesSolver(mesh, 1.0 - problem.params.omega, 0.0)
    u_bar = np.zeros((1, geo.ny)) if u_init is None else np.asarray(u_init, float).reshape(1, geo.ny)
    if tau_init is not None:
        tau_bar = np.asarray(tau_init, dtype=float)
    else:
        v0 = np.zeros((1, geo.ny + 1))
        k0 = velocity_gradient(mesh, u_bar, v0)
        divergence_check(k0, problem)
        g0 = stationary_age_solve(k0, we, problem.grid, mesh)
        tau_bar = assemble_tau(g0, problem.kernel, problem.grid, problem.measure, problem.params.omega, we).tau
    changes: list[float] = []
    factors: list[float] = []
    for it in range(1, max_iters + 1):
        u, p, tau, gfield, kappa = _apply_map(problem, solver, tau_bar)
        change = float(np.max(np.abs(u - u_bar)))
        if changes and changes[-1] > 0:
            factors.append(change / changes[-1])
        changes.append(change)
        u_bar, tau_bar = u, tau
        if not np.isfinite(change):
            break
        if change < tol:
            res = StationaryResult(u[0], p[0], tau, gfield, it, changes, factors, report)
            res._kappa = kappa
            return res
    raise NotConverged(max_iters, factors[-1] if factors else None)
