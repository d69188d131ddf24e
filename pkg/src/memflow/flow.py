"""Unsteady coupled solver: momentum, deformation transport and stress.

Each time step runs Picard iterations of the frozen-coefficient map

1. Stokes solve with source ``-Re u.grad u + div tau + f`` built from the
   current iterate;
2. semi-Lagrangian transport of ``G`` from the previous time level with the
   new velocity;
3. stress assembly;

until successive velocities differ by less than ``picard_tol``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .deformation import (
    DET_ABORT,
    DET_WARN,
    AgeTimeField,
    HomogeneousFlow,
    NormMonitor,
    age_shift,
    norm_monitor_advance,
    norm_monitor_record,
    step_homogeneous,
    step_transport,
)
from .errors import Aborted, CflViolation, GeometryUnsupported, MemflowError
from .grid import CellGrid
from .kernels import AgeGrid, MemoryKernel
from .mac import StokesSolver, advection, cell_velocity, divergence, stress_divergence, velocity_gradient
from .strain import StrainMeasure
from .stress import assemble_tau
from .tensor import norm2


@dataclass(frozen=True)
class FluidParams:
    """Reynolds number, Weissenberg number and retardation ratio."""

    re: float
    we: float
    omega: float

    def __post_init__(self):
        if self.re < 0:
            raise ValueError("Re must be non-negative")
        if not self.we > 0:
            raise ValueError("We must be positive")
        if not 0 <= self.omega < 1:
            raise ValueError("omega must lie in [0, 1)")


@dataclass(frozen=True)
class HomogeneousBox:
    """Prescribed uniform kinematics; no momentum solve."""

    flow: HomogeneousFlow


@dataclass(frozen=True)
class PeriodicChannel2D:
    """Channel periodic in x with no-slip walls at ``y = 0`` and ``y = height``.

    The top wall may slide with ``wall_speed`` and a uniform body force
    ``body_force`` may drive the flow.
    """

    nx: int
    ny: int
    height: float = 1.0
    length: float = 1.0
    wall_speed: float = 0.0
    body_force: tuple = (0.0, 0.0)

    @property
    def mesh(self) -> CellGrid:
        return CellGrid(self.nx, self.ny, self.length, self.height)


@dataclass(frozen=True)
class Couette(PeriodicChannel2D):
    """Channel driven by the top wall."""

    wall_speed: float = 1.0


@dataclass(frozen=True)
class Poiseuille(PeriodicChannel2D):
    """Channel driven by a streamwise body force."""

    body_force: tuple = (1.0, 0.0)


@dataclass(frozen=True)
class Scenario:
    """Geometry plus data.

    ``forcing`` overrides the geometry's constant body force with a function
    of time returning ``(fx, fy)``. ``u0`` is ``(u, v)`` face arrays and
    ``g_old`` maps ages to initial deformation tensors.
    """

    geometry: object
    forcing: Callable[[float], tuple] | None = None
    u0: tuple | None = None
    g_old: Callable[[np.ndarray], np.ndarray] | None = None
    name: str = ""

    def force(self, t: float) -> tuple[float, float]:
        if self.forcing is not None:
            fx, fy = self.forcing(t)
            return float(fx), float(fy)
        geo = self.geometry
        bf = getattr(geo, "body_force", (0.0, 0.0))
        return float(bf[0]), float(bf[1])


@dataclass
class FlowState:
    """Snapshot of the coupled solution at time ``t``."""

    t: float
    u: np.ndarray | None
    v: np.ndarray | None
    p: np.ndarray | None
    tau: np.ndarray
    gfield: AgeTimeField
    picard_iters: int = 0
    picard_residual: float = 0.0
    step: int = 0


DIAGNOSTIC_COLUMNS = (
    "step",
    "t",
    "dt",
    "kinetic_energy",
    "max_tau",
    "tau11",
    "tau12",
    "tau22",
    "n1",
    "wall_tau12",
    "picard_iters",
    "picard_residual",
    "max_divergence",
    "det_drift",
    "norm_proxy",
    "norm_bound",
)


@dataclass
class Trajectory:
    """Per-step diagnostics and the final state of :meth:`FlowSolver.time_advance`."""

    rows: list = field(default_factory=list)
    state: FlowState | None = None
    monitor: NormMonitor | None = None
    warnings: list = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)


class FlowSolver:
    """Coupled integral-viscoelastic solver for one scenario.

    Parameters
    ----------
    scenario, params, kernel, age_grid, measure
        Problem definition.
    picard_tol, max_picard
        Stopping rule for the per-step fixed point; when ``max_picard`` is
        reached the step is accepted with a warning.
    stress_enabled
        When false the transport and stress path is skipped entirely
        (Newtonian reference).
    age_order, space_order
        Age and spatial interpolation orders (1 or 3) for the transport step.
    monitor_c0
        Constant in the norm-monitor bound.
    """

    def __init__(
        self,
        scenario: Scenario,
        params: FluidParams,
        kernel: MemoryKernel,
        age_grid: AgeGrid,
        measure: StrainMeasure,
        *,
        picard_tol: float = 1e-8,
        max_picard: int = 50,
        stress_enabled: bool = True,
        age_order: int = 3,
        space_order: int = 3,
        renormalize: bool = False,
        cfl: float = 0.9,
        monitor_c0: float = 0.5,
    ):
        self.scenario = scenario
        self.params = params
        self.kernel = kernel
        self.grid = age_grid
        self.measure = measure
        self.picard_tol = picard_tol
        self.max_picard = max_picard
        self.stress_enabled = stress_enabled
        self.age_order = age_order
        self.space_order = space_order
        self.renormalize = renormalize
        self.cfl = cfl
        self.monitor_c0 = monitor_c0
        geo = scenario.geometry
        if isinstance(geo, HomogeneousBox):
            self.mesh = None
            self.d = geo.flow.d
        elif isinstance(geo, PeriodicChannel2D):
            self.mesh = geo.mesh
            self.d = 2
            if space_order == 3 and self.mesh.ny < 4:
                raise ValueError("cubic spatial interpolation needs ny >= 4")
        else:
            raise GeometryUnsupported(f"unsupported geometry {type(geo).__name__}")
        self._stokes: dict[float, StokesSolver] = {}

    # ------------------------------------------------------------------ setup
    @property
    def homogeneous(self) -> bool:
        return self.mesh is None

    @property
    def wall_speeds(self) -> tuple[float, float]:
        return 0.0, float(getattr(self.scenario.geometry, "wall_speed", 0.0))

    def _solver(self, dt: float | None) -> StokesSolver:
        a = 0.0 if (dt is None or self.params.re == 0) else self.params.re / dt
        if a not in self._stokes:
            ub, ut = self.wall_speeds
            self._stokes[a] = StokesSolver(self.mesh, 1.0 - self.params.omega, a, ub, ut)
        return self._stokes[a]

    def initial_state(self) -> FlowState:
        """State at ``t = 0``; with ``Re = 0`` the velocity is slaved to the data."""
        gfield = AgeTimeField.initial(self.grid, self.params.we, self.d, self.mesh, self.scenario.g_old)
        tau = self._assemble(gfield)
        if self.homogeneous:
            return FlowState(0.0, None, None, None, tau, gfield)
        m = self.mesh
        if self.scenario.u0 is not None:
            u = np.array(self.scenario.u0[0], dtype=float)
            v = np.array(self.scenario.u0[1], dtype=float)
            p = np.zeros((m.nx, m.ny))
        else:
            u = np.zeros((m.nx, m.ny))
            v = np.zeros((m.nx, m.ny + 1))
            p = np.zeros((m.nx, m.ny))
        state = FlowState(0.0, u, v, p, tau, gfield)
        if self.params.re == 0:
            state.u, state.v, state.p = self.stokes_step(state, state.u, state.v, tau, None, 0.0)
        return state

    def _assemble(self, gfield: AgeTimeField) -> np.ndarray:
        ncell = gfield.ncells
        if not self.stress_enabled:
            return np.zeros((ncell, self.d, self.d))
        return assemble_tau(gfield, self.kernel, self.grid, self.measure, self.params.omega, self.params.we).tau

    # ------------------------------------------------------------------ pieces
    def stokes_step(self, state: FlowState, u_bar, v_bar, tau_bar, dt: float | None, t_new: float):
        """Solve for ``(u, v, p)`` at ``t_new`` with the frozen iterate as source.

        ``dt = None`` gives the steady (or Re = 0) problem.
        """
        m = self.mesh
        re = self.params.re
        fx, fy = self.scenario.force(t_new)
        gu = np.full((m.nx, m.ny), fx)
        gv = np.zeros((m.nx, m.ny + 1))
        gv[:, 1:-1] = fy
        if self.stress_enabled:
            du, dv = stress_divergence(m, tau_bar)
            gu = gu + du
            gv = gv + dv
        if re > 0:
            ub, ut = self.wall_speeds
            au, av = advection(m, u_bar, v_bar, ub, ut)
            gu = gu - re * au
            gv = gv - re * av
        solver = self._solver(dt)
        if solver.a > 0:
            gu = gu + solver.a * state.u
            gv = gv + solver.a * state.v
        return solver.solve(gu, gv)

    def _transport(self, state: FlowState, u, v, dt: float, old: tuple) -> AgeTimeField:
        ub, ut = self.wall_speeds
        k_new = velocity_gradient(self.mesh, u, v, ub, ut)
        return step_transport(
            state.gfield,
            dt,
            k_new,
            cell_velocity(u, v),
            grad_u_old=old[0],
            u_old=old[1],
            age_order=self.age_order,
            space_order=self.space_order,
            renormalize=self.renormalize,
            cfl=self.cfl,
            age_shifted=old[2],
        )

    def fixed_point_step(self, state: FlowState, dt: float) -> FlowState:
        """One time step of Picard iterations; returns the new state."""
        t_new = state.t + dt
        if self.homogeneous:
            g = state.gfield
            if self.stress_enabled:
                g = step_homogeneous(state.gfield, self.scenario.geometry.flow, dt,
                                     age_order=self.age_order, renormalize=self.renormalize, cfl=self.cfl)
            g.t = t_new
            return FlowState(t_new, None, None, None, self._assemble(g), g, 1, 0.0, state.step + 1)

        u_bar, v_bar, tau_bar = state.u, state.v, state.tau
        g_new = state.gfield
        residual = math.inf
        iters = 0
        ub, ut = self.wall_speeds
        # the age interpolation depends only on the previous level; share it across iterations
        shifted = age_shift(state.gfield, dt, self.age_order) if self.stress_enabled else None
        old = (velocity_gradient(self.mesh, state.u, state.v, ub, ut), cell_velocity(state.u, state.v), shifted)
        for iters in range(1, self.max_picard + 1):
            u, v, p = self.stokes_step(state, u_bar, v_bar, tau_bar, dt, t_new)
            if self.stress_enabled:
                g_new = self._transport(state, u, v, dt, old)
                tau = self._assemble(g_new)
            else:
                tau = tau_bar
            residual = max(float(np.max(np.abs(u - u_bar))), float(np.max(np.abs(v - v_bar))))
            u_bar, v_bar, tau_bar = u, v, tau
            if residual < self.picard_tol:
                break
        else:
            warnings.warn(
                f"Picard iteration stopped at {self.max_picard} iterations (residual {residual:.3e}) at t={t_new}",
                RuntimeWarning,
                stacklevel=2,
            )
        if not self.stress_enabled:
            g_new = AgeTimeField(state.gfield.grid, state.gfield.values, state.gfield.we, self.mesh, t_new)
        g_new.t = t_new
        return FlowState(t_new, u_bar, v_bar, p, tau_bar, g_new, iters, residual, state.step + 1)

    # ------------------------------------------------------------------ driver
    def max_stable_dt(self, state: FlowState) -> float:
        lim = math.inf
        if self.stress_enabled and self.grid.grading == "uniform":
            lim = self.cfl * self.params.we * self.grid.ds_min
        if not self.homogeneous:
            vel = cell_velocity(state.u, state.v)
            for k, h in enumerate((self.mesh.dx, self.mesh.dy)):
                vm = float(np.max(np.abs(vel[:, k])))
                if vm > 0:
                    lim = min(lim, self.cfl * h / vm)
        return lim

    def diagnostics(self, state: FlowState, dt: float, monitor: NormMonitor | None) -> dict:
        tau = state.tau
        mean = tau.mean(axis=0)
        row = {
            "step": state.step,
            "t": state.t,
            "dt": dt,
            "kinetic_energy": 0.0,
            "max_tau": float(np.max(norm2(tau))) if tau.size else 0.0,
            "tau11": float(mean[0, 0]),
            "tau12": float(mean[0, 1]),
            "tau22": float(mean[1, 1]),
            "n1": float(mean[0, 0] - mean[1, 1]),
            "wall_tau12": float(mean[0, 1]),
            "picard_iters": state.picard_iters,
            "picard_residual": state.picard_residual,
            "max_divergence": 0.0,
            "det_drift": state.gfield.det_drift() if self.stress_enabled else 0.0,
            "norm_proxy": monitor.proxies[-1] if monitor else float("nan"),
            "norm_bound": monitor.bounds[-1] if monitor else float("nan"),
        }
        if not self.homogeneous:
            m = self.mesh
            row["kinetic_energy"] = 0.5 * m.cell_area * float(np.sum(state.u**2) + np.sum(state.v[:, 1:-1] ** 2))
            row["max_divergence"] = float(np.max(np.abs(divergence(m, state.u, state.v))))
            top = tau.reshape(m.nx, m.ny, 2, 2)[:, -2:, 0, 1].mean(axis=0)
            row["wall_tau12"] = float(1.5 * top[1] - 0.5 * top[0])
        return row

    def _grad_u_norm(self, state: FlowState) -> float:
        """``W^{1,p}`` proxy ``||grad u||_p + ||grad grad u||_p`` driving the bound."""
        if self.homogeneous:
            return float(norm2(self.scenario.geometry.flow.kappa(state.t)))
        ub, ut = self.wall_speeds
        k = velocity_gradient(self.mesh, state.u, state.v, ub, ut)
        p = self._monitor_p
        vol = self.mesh.cell_area
        hess = self.mesh.gradient(k)
        first = (np.sum(norm2(k) ** p) * vol) ** (1.0 / p)
        second = (np.sum(np.sqrt(np.sum(hess**2, axis=(1, 2, 3))) ** p) * vol) ** (1.0 / p)
        return float(first + second)

    def time_advance(
        self,
        state: FlowState,
        t_end: float,
        dt: float,
        *,
        record_every: int = 1,
        monitor: bool = True,
        on_step: Callable[[FlowState], None] | None = None,
    ) -> Trajectory:
        """March to ``t_end`` with steps ``min(dt, CFL limit)``.

        Raises
        ------
        Aborted
            On non-finite values, excessive determinant drift or a failed
            sub-step; ``exc.state`` holds the last valid state.
        """
        if not t_end > state.t:
            raise ValueError("t_end must exceed the current time")
        traj = Trajectory()
        mon = None
        if monitor and self.stress_enabled:
            mon = NormMonitor.start(state.gfield, c0=self.monitor_c0)
            self._monitor_p = mon.p
        traj.rows.append(self.diagnostics(state, 0.0, mon))
        warned = False
        try:
            while state.t < t_end * (1 - 1e-14):
                h = min(dt, t_end - state.t)
                if t_end - (state.t + h) < 1e-9 * dt:
                    h = t_end - state.t
                lim = self.max_stable_dt(state)
                if h > lim:
                    h = lim
                try:
                    with warnings.catch_warnings(record=True) as caught:
                        warnings.simplefilter("always")
                        new = self.fixed_point_step(state, h)
                    for w in caught:
                        traj.warnings.append(str(w.message))
                except (MemflowError, FloatingPointError, np.linalg.LinAlgError) as exc:
                    raise Aborted(f"step at t={state.t} failed: {exc}", state) from exc
                if not np.all(np.isfinite(new.tau)) or (new.u is not None and not np.all(np.isfinite(new.u))):
                    raise Aborted(f"non-finite values at t={new.t}", state)
                if self.stress_enabled:
                    drift = new.gfield.det_drift()
                    if drift > DET_ABORT:
                        raise Aborted(f"determinant drift {drift:.3e} at t={new.t}", state)
                    if drift > DET_WARN and not warned:
                        warned = True
                        traj.warnings.append(f"determinant drift {drift:.3e} at t={new.t}")
                if mon is not None:
                    norm_monitor_advance(mon, self._grad_u_norm(new), h)
                state = new
                if on_step is not None:
                    on_step(state)
                if state.step % record_every == 0 or state.t >= t_end * (1 - 1e-14):
                    if mon is not None:
                        norm_monitor_record(state.gfield, mon)
                    traj.rows.append(self.diagnostics(state, h, mon))
        except Aborted as exc:
            traj.state = exc.state
            traj.monitor = mon
            exc.trajectory = traj
            raise
        traj.state = state
        traj.monitor = mon
        return traj
