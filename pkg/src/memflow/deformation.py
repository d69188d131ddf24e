"""Age-structured transport of the relative deformation gradient.

The field ``G(s, t, x)`` obeys

    dG/dt + (1/We) dG/ds + u . grad G = G kappa,     G(0, t, x) = I,

with ``kappa_ij = d u_j / d x_i``. With this index convention simple shear
``u_1 = rate * x_2`` has ``kappa = rate * E_21`` (see :func:`simple_shear`).

This module contains the semi-Lagrangian stepper, closed-form solutions for
homogeneous flows, differential oracles (Finger tensor ODE and the upper and
lower convected Maxwell models), the characteristic Gronwall validator and a
norm monitor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import sparse
from scipy.integrate import quad

from .errors import BoundViolated, CflViolation
from .grid import CellGrid
from .kernels import AgeGrid
from .tensor import det, norm2, right_multiply, tensor_exp

CFL = 0.9
DET_WARN = 1e-5
DET_ABORT = 1e-2


def simple_shear(rate: float, d: int = 2) -> np.ndarray:
    """Velocity gradient of ``u_1 = rate * x_2`` in the ``d u_j / d x_i`` layout."""
    k = np.zeros((d, d))
    k[1, 0] = rate
    return k


def planar_elongation(rate: float, d: int = 2) -> np.ndarray:
    """``u = rate * (x_1, -x_2, 0)``."""
    k = np.zeros((d, d))
    k[0, 0], k[1, 1] = rate, -rate
    return k


@dataclass(frozen=True)
class HomogeneousFlow:
    """Spatially uniform velocity gradient ``kappa(t) = a(t) kappa0``.

    Parameters
    ----------
    kappa0 : array_like, shape (d, d)
        Traceless direction of the velocity gradient.
    schedule : {"constant", "steps", "ramp"}
        ``constant``: ``a = 1`` for ``t >= 0``. ``steps``: piecewise constant
        with values ``amplitudes[k]`` after ``times[k-1]``. ``ramp``: smooth
        start ``a = (1 - cos(pi t / t_ramp)) / 2`` up to ``t_ramp``, then 1.
    """

    kappa0: np.ndarray
    schedule: str = "constant"
    times: tuple = ()
    amplitudes: tuple = (1.0,)
    t_ramp: float = 1.0

    def __post_init__(self):
        k = np.array(self.kappa0, dtype=float)
        if k.ndim != 2 or k.shape[0] != k.shape[1] or k.shape[0] not in (2, 3):
            raise ValueError("kappa0 must be a 2x2 or 3x3 matrix")
        if abs(np.trace(k)) > 1e-12 * max(1.0, np.abs(k).max()):
            raise ValueError("velocity gradient must be traceless")
        k.setflags(write=False)
        object.__setattr__(self, "kappa0", k)
        if self.schedule == "steps":
            if len(self.amplitudes) != len(self.times) + 1 or list(self.times) != sorted(self.times):
                raise ValueError("steps need sorted times and one more amplitude than times")
        elif self.schedule not in ("constant", "ramp"):
            raise ValueError(f"unknown schedule {self.schedule!r}")

    @property
    def d(self) -> int:
        return self.kappa0.shape[0]

    def rate(self, t: float) -> float:
        if t < 0:
            return 0.0
        if self.schedule == "constant":
            return 1.0
        if self.schedule == "ramp":
            return 0.5 * (1 - math.cos(math.pi * t / self.t_ramp)) if t < self.t_ramp else 1.0
        return float(self.amplitudes[int(np.searchsorted(self.times, t, side="right"))])

    def integral(self, t):
        """``A(t) = int_0^t a``, vectorised; zero for ``t <= 0``."""
        t = np.asarray(t, dtype=float)
        tp = np.maximum(t, 0.0)
        if self.schedule == "constant":
            out = tp
        elif self.schedule == "ramp":
            T = self.t_ramp
            inside = tp / 2 - T / (2 * math.pi) * np.sin(math.pi * np.minimum(tp, T) / T)
            out = np.where(tp < T, inside, T / 2 + (tp - T))
        else:
            edges = np.concatenate([[0.0], np.asarray(self.times, float)])
            amps = np.asarray(self.amplitudes, float)
            lengths = np.clip(tp[..., None] - edges, 0.0, None)
            widths = np.diff(np.concatenate([edges, [np.inf]]))
            out = np.sum(amps * np.minimum(lengths, widths), axis=-1)
        return float(out) if out.ndim == 0 else out

    def kappa(self, t: float) -> np.ndarray:
        return self.rate(t) * self.kappa0

    def mean_kappa(self, t0, t1) -> np.ndarray:
        """Time average of ``kappa`` over ``[t0, t1]`` (vectorised in ``t0``)."""
        t0 = np.asarray(t0, dtype=float)
        span = t1 - t0
        with np.errstate(invalid="ignore", divide="ignore"):
            a = np.where(span > 0, (self.integral(t1) - self.integral(t0)) / np.where(span > 0, span, 1), self.rate(t1))
        return np.asarray(a)[..., None, None] * self.kappa0


@dataclass
class AgeTimeField:
    """Discrete deformation field ``G(s_i, x_c)``.

    ``values`` has shape ``(n_ages, n_cells, d, d)``; homogeneous fields have
    a single cell and ``mesh = None``.
    """

    grid: AgeGrid
    values: np.ndarray
    we: float
    mesh: CellGrid | None = None
    t: float = 0.0

    def __post_init__(self):
        if not self.we > 0:
            raise ValueError("Weissenberg number must be positive")
        v = self.values
        if v.ndim != 4 or v.shape[0] != self.grid.size or v.shape[2] != v.shape[3]:
            raise ValueError(f"values must have shape (n_ages, n_cells, d, d), got {v.shape}")
        ncell = 1 if self.mesh is None else self.mesh.ncells
        if v.shape[1] != ncell:
            raise ValueError(f"expected {ncell} cells, got {v.shape[1]}")

    @property
    def d(self) -> int:
        return self.values.shape[-1]

    @property
    def ncells(self) -> int:
        return self.values.shape[1]

    @classmethod
    def initial(
        cls,
        grid: AgeGrid,
        we: float,
        d: int = 2,
        mesh: CellGrid | None = None,
        g_old: Callable[[np.ndarray], np.ndarray] | None = None,
    ) -> "AgeTimeField":
        """Field at ``t = 0``; ``G_old`` defaults to the identity."""
        ncell = 1 if mesh is None else mesh.ncells
        if g_old is None:
            vals = np.broadcast_to(np.eye(d), (grid.size, ncell, d, d)).copy()
        else:
            g = np.asarray(g_old(grid.nodes), dtype=float)
            if g.ndim == 3:
                g = np.broadcast_to(g[:, None], (grid.size, ncell, d, d))
            vals = np.array(g, dtype=float)
            vals[0] = np.eye(d)
        return cls(grid, vals, we, mesh, 0.0)

    def det_drift(self) -> float:
        return float(np.max(np.abs(det(self.values) - 1.0)))

    def copy(self) -> "AgeTimeField":
        return AgeTimeField(self.grid, self.values.copy(), self.we, self.mesh, self.t)

    def spatial_gradient(self) -> np.ndarray:
        """Finite-difference ``grad G`` with shape ``(n_ages, n_cells, 2, d, d)``."""
        if self.mesh is None:
            return np.zeros(self.values.shape[:2] + (2,) + self.values.shape[2:])
        grad = self.mesh.gradient(np.moveaxis(self.values, 1, 0))  # (cells, 2, ages, d, d)
        return grad.transpose(2, 0, 1, 3, 4)


def age_stencil(nodes: np.ndarray, shift: float, order: int = 3) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Interpolation stencil for ``G(s_i - shift)``.

    Returns ``(targets, idx, weights)`` where ``targets`` are the node indices
    whose foot lies inside the grid, and each row of ``idx``/``weights``
    holds a Lagrange stencil (2 points for ``order=1``, 4 for ``order=3``).
    """
    n = len(nodes)
    targets = np.nonzero(nodes >= shift * (1 + 1e-12))[0]
    foot = nodes[targets] - shift
    j = np.clip(np.searchsorted(nodes, foot, side="right") - 1, 0, n - 2)
    if order == 1:
        h = nodes[j + 1] - nodes[j]
        w1 = (foot - nodes[j]) / h
        return targets, np.stack([j, j + 1], 1), np.stack([1 - w1, w1], 1)
    if order != 3:
        raise ValueError("age interpolation order must be 1 or 3")
    if n < 4:
        raise ValueError("cubic age interpolation needs at least 4 nodes")
    base = np.clip(j - 1, 0, n - 4)
    idx = base[:, None] + np.arange(4)
    pts = nodes[idx]
    w = np.ones_like(pts)
    for a in range(4):
        for b in range(4):
            if a != b:
                w[:, a] *= (foot - pts[:, b]) / (pts[:, a] - pts[:, b])
    return targets, idx, w


def _cached_stencil(grid: AgeGrid, shift: float, order: int):
    """Targets and the sparse interpolation matrix (rows follow ``targets``)."""
    key = ("age_stencil", float(shift), order)
    cache = grid.meta.setdefault("_cache", {})
    if key not in cache:
        if len(cache) > 16:
            cache.clear()
        targets, idx, w = age_stencil(grid.nodes, shift, order)
        rows = np.repeat(np.arange(len(targets)), idx.shape[1])
        mat = sparse.csr_matrix((w.ravel(), (rows, idx.ravel())), shape=(len(targets), grid.size))
        born = np.setdiff1d(np.arange(grid.size), targets)
        cache[key] = (targets, mat, born[born > 0])
    return cache[key]


def _flow_factor(kappa: np.ndarray, tau) -> np.ndarray:
    """Second-order Taylor factor ``I + tau k + tau^2 k^2 / 2``."""
    tau = np.asarray(tau, dtype=float)[..., None, None]
    kk = kappa @ kappa
    return np.eye(kappa.shape[-1]) + tau * kappa + 0.5 * tau**2 * kk


def check_cfl(field: AgeTimeField, dt: float, velocity: np.ndarray | None = None, cfl: float = CFL) -> None:
    """Raise :class:`CflViolation` when ``dt`` exceeds the transport limit.

    The age limit ``dt <= cfl We ds_min`` only applies to uniform age grids;
    graded grids deliberately have tiny first intervals that would otherwise
    pin ``dt`` to the grading scale.
    """
    if field.grid.grading == "uniform" and dt / field.we > cfl * field.grid.ds_min * (1 + 1e-12):
        raise CflViolation(f"dt={dt} exceeds age limit {cfl * field.we * field.grid.ds_min}")
    if velocity is not None and field.mesh is not None:
        vmax = np.max(np.abs(velocity), axis=0)
        lim = [field.mesh.dx, field.mesh.dy]
        for k in range(2):
            if vmax[k] > 0 and dt * vmax[k] > cfl * lim[k]:
                raise CflViolation(f"dt={dt} exceeds spatial limit {cfl * lim[k] / vmax[k]}")


def step_transport(
    field: AgeTimeField,
    dt: float,
    grad_u: np.ndarray,
    u: np.ndarray | None = None,
    *,
    grad_u_old: np.ndarray | None = None,
    u_old: np.ndarray | None = None,
    boundary_kappa: Callable[[np.ndarray], np.ndarray] | None = None,
    age_order: int = 3,
    space_order: int = 3,
    renormalize: bool = False,
    cfl: float = CFL,
    check: bool = True,
    age_shifted: np.ndarray | None = None,
) -> AgeTimeField:
    """Advance the field by one semi-Lagrangian step.

    Each value is traced back ``dt`` in time, ``dt / We`` in age and
    ``u dt`` in space, interpolated at the foot (Lagrange in age and in
    space) and multiplied on the right by the second-order Taylor factor of
    ``exp(dt kappa_mid)``. ``kappa_mid`` averages the new gradient at the
    arrival point with the old gradient at the foot.

    Parameters
    ----------
    grad_u, grad_u_old : ndarray, shape (n_cells, d, d) or (d, d)
        Velocity gradient at the new and previous time level. ``grad_u_old``
        defaults to ``grad_u``.
    u, u_old : ndarray, shape (n_cells, 2), optional
        Cell-centre velocity; required when the field lives on a mesh.
    boundary_kappa : callable, optional
        Maps birth lags ``sigma`` (time since leaving ``s = 0``) to the mean
        velocity gradient over that lag, shape ``(n, n_cells, d, d)``. By
        default the arrival gradient is used.
    age_order : {1, 3}
        Linear or cubic Lagrange interpolation in age.
    space_order : {1, 3}
        Bilinear or bicubic Lagrange interpolation in space.
    age_shifted : ndarray, optional
        Precomputed :func:`age_shift` of ``field``; lets repeated steps from
        the same field skip the age interpolation.

    Raises
    ------
    CflViolation
        See :func:`check_cfl`.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    d = field.d
    ncell = field.ncells
    k_new = np.broadcast_to(np.asarray(grad_u, dtype=float), (ncell, d, d))
    k_old = k_new if grad_u_old is None else np.broadcast_to(np.asarray(grad_u_old, dtype=float), (ncell, d, d))
    if field.mesh is not None and u is None:
        raise ValueError("velocity required for a field on a mesh")
    if check:
        check_cfl(field, dt, u, cfl)

    nodes = field.grid.nodes
    targets, _, born = _cached_stencil(field.grid, dt / field.we, age_order)
    old = field.values
    eye = np.eye(d)
    g_age = age_shift(field, dt, age_order) if age_shifted is None else age_shifted

    if field.mesh is not None:
        mesh = field.mesh
        x = mesh.flat_centers()
        u_new = np.asarray(u, dtype=float)
        u_mid = u_new if u_old is None else 0.5 * (u_new + np.asarray(u_old, dtype=float))
        si, sw = mesh.bilinear(x - 0.5 * dt * u_mid)
        v_half = np.einsum("cpk,cp->ck", u_mid[si], sw)
        foot = x - dt * v_half
        fi, fw = mesh.bilinear(foot) if space_order == 1 else mesh.bicubic(foot)
        rows = np.repeat(np.arange(ncell), fi.shape[1])
        space = sparse.csr_matrix((fw.ravel(), (rows, fi.ravel())), shape=(ncell, ncell))
        per_cell = g_age.transpose(1, 0, 2, 3).reshape(ncell, -1)
        g_foot = (space @ per_cell).reshape(ncell, len(targets), d, d).transpose(1, 0, 2, 3) + eye
        k_foot = (space @ k_old.reshape(ncell, -1)).reshape(ncell, d, d)
    else:
        g_foot = g_age + eye
        k_foot = k_old
    k_mid = 0.5 * (k_new + k_foot)

    new = np.empty_like(old)
    new[targets] = right_multiply(g_foot, _flow_factor(k_mid, dt))

    if born.size:
        sigma = field.we * nodes[born]
        kb = (np.broadcast_to(k_new, (born.size, ncell, d, d)) if boundary_kappa is None
              else np.asarray(boundary_kappa(sigma), dtype=float))
        new[born] = _flow_factor(kb, sigma[:, None])
    new[0] = eye

    if renormalize:
        dets = det(new[1:])
        new[1:] /= (np.sign(dets) * np.abs(dets) ** (1.0 / d))[..., None, None]
    return AgeTimeField(field.grid, new, field.we, field.mesh, field.t + dt)


def age_shift(field: AgeTimeField, dt: float, age_order: int = 3) -> np.ndarray:
    """``G - delta`` interpolated at ages ``s_i - dt/We`` for the non-born targets.

    Interpolating the displacement keeps rest states exactly at ``delta``.
    """
    targets, interp, _ = _cached_stencil(field.grid, dt / field.we, age_order)
    disp = field.values - np.eye(field.d)
    return (interp @ disp.reshape(field.grid.size, -1)).reshape((len(targets),) + field.values.shape[1:])


def step_homogeneous(field: AgeTimeField, flow: HomogeneousFlow, dt: float, **kwargs) -> AgeTimeField:
    """:func:`step_transport` for a prescribed homogeneous flow.

    The source uses the exact time average of ``kappa`` over the step.
    """
    t0, t1 = field.t, field.t + dt
    kbar = flow.mean_kappa(t0, t1)

    def boundary(sigma):
        return flow.mean_kappa(t1 - sigma, t1)[:, None]

    return step_transport(field, dt, kbar, boundary_kappa=boundary, **kwargs)


def exact_homogeneous(
    flow: HomogeneousFlow,
    t: float,
    s,
    we: float,
    g_old: Callable[[np.ndarray], np.ndarray] | None = None,
) -> np.ndarray:
    """Closed-form ``G(s, t)`` for a homogeneous flow started at ``t = 0``.

    Characteristics with ``t > We s`` were born at the ``s = 0`` boundary and
    give ``exp((A(t) - A(t - We s)) kappa0)``; the others carry
    ``G_old(s - t/We) exp(A(t) kappa0)``.
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    d = flow.d
    born = t > we * s
    out = np.empty(s.shape + (d, d))
    strain = flow.integral(t) - flow.integral(t - we * s[born])
    out[born] = tensor_exp(np.asarray(strain)[:, None, None] * flow.kappa0)
    rest = ~born
    if np.any(rest):
        fac = tensor_exp(flow.integral(t) * flow.kappa0)
        if g_old is None:
            out[rest] = fac
        else:
            out[rest] = np.asarray(g_old(s[rest] - t / we), dtype=float) @ fac
    return out


def _rk4(rhs, y0: np.ndarray, t0, h, n: int):
    """Fixed-step RK4 with per-row step sizes (``t0``, ``h`` broadcast over rows)."""
    y = y0.copy()
    t = np.asarray(t0, dtype=float).copy()
    for _ in range(n):
        k1 = rhs(t, y)
        k2 = rhs(t + h / 2, y + (h / 2)[..., None, None] * k1)
        k3 = rhs(t + h / 2, y + (h / 2)[..., None, None] * k2)
        k4 = rhs(t + h, y + h[..., None, None] * k3)
        y = y + (h / 6)[..., None, None] * (k1 + 2 * k2 + 2 * k3 + k4)
        t = t + h
    return y


def finger_evolution_oracle(
    flow: HomogeneousFlow,
    we: float,
    s,
    t_end: float,
    dt: float,
    b_old: Callable[[np.ndarray], np.ndarray] | None = None,
) -> np.ndarray:
    """Integrate ``dB/dt = B kappa + kappa^T B`` along characteristics with RK4.

    For each age ``s`` the characteristic arriving at ``(s, t_end)`` is
    traced to its birth (the ``s = 0`` boundary, where ``B = I``, or the
    initial line, where ``B = B_old``) and integrated forward with steps no
    larger than ``dt``.
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    d = flow.d
    t_birth = np.maximum(t_end - we * s, 0.0)
    b0 = np.broadcast_to(np.eye(d), s.shape + (d, d)).copy()
    from_old = t_end <= we * s
    if b_old is not None and np.any(from_old):
        b0[from_old] = b_old(s[from_old] - t_end / we)
    span = t_end - t_birth
    n = max(1, int(math.ceil(span.max() / dt - 1e-9)))
    h = span / n

    def rhs(t, b):
        k = np.asarray([flow.rate(ti) for ti in t])[:, None, None] * flow.kappa0
        return b @ k + np.swapaxes(k, -1, -2) @ b

    return _rk4(rhs, b0, t_birth, h, n)


def maxwell_ode_oracle(
    flow: HomogeneousFlow,
    we: float,
    omega: float,
    times,
    dt: float = 1e-3,
    model: str = "ucm",
) -> np.ndarray:
    """Differential Maxwell stress for a homogeneous flow from rest.

    ``ucm``: ``We (tau' - kappa^T tau - tau kappa) + tau = 2 omega D``.
    ``lcm``: ``We (tau' + kappa tau + tau kappa^T) + tau = 2 omega D``.
    Integrated with RK4; steps are shortened to land on each requested time.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(np.diff(times) < 0) or times[0] < 0:
        raise ValueError("times must be non-negative and sorted")
    if model not in ("ucm", "lcm"):
        raise ValueError("model must be 'ucm' or 'lcm'")
    upper = model == "ucm"

    def rhs(t, tau):
        k = np.asarray([flow.rate(ti) for ti in t])[:, None, None] * flow.kappa0
        kt = np.swapaxes(k, -1, -2)
        dmat = k + kt
        conv = kt @ tau + tau @ k if upper else -(k @ tau + tau @ kt)
        return conv + (omega * dmat - tau) / we

    d = flow.d
    tau = np.zeros((1, d, d))
    t = 0.0
    out = np.empty((len(times), d, d))
    for m, target in enumerate(times):
        span = target - t
        if span > 0:
            n = max(1, int(math.ceil(span / dt - 1e-9)))
            tau = _rk4(rhs, tau, np.array([t]), np.array([span / n]), n)
            t = float(target)
        out[m] = tau[0]
    return out


def ucm_stress_oracle(gamma_dot: float, we: float, omega: float, t, dt: float = 1e-3) -> np.ndarray:
    """UCM stress in start-up simple shear (2D) at time(s) ``t``."""
    flow = HomogeneousFlow(simple_shear(gamma_dot))
    out = maxwell_ode_oracle(flow, we, omega, t, dt, "ucm")
    return out[0] if np.ndim(t) == 0 else out


def lcm_stress_oracle(gamma_dot: float, we: float, omega: float, t, dt: float = 1e-3) -> np.ndarray:
    """LCM counterpart of :func:`ucm_stress_oracle`."""
    flow = HomogeneousFlow(simple_shear(gamma_dot))
    out = maxwell_ode_oracle(flow, we, omega, t, dt, "lcm")
    return out[0] if np.ndim(t) == 0 else out


def startup_shear_closed_form(gamma_dot: float, we: float, omega: float, t):
    """Closed-form start-up shear stress and first normal stress difference."""
    t = np.asarray(t, dtype=float)
    T = t / we
    tau12 = omega * gamma_dot * (1.0 - np.exp(-T))
    n1 = 2.0 * omega * we * gamma_dot**2 * (1.0 - np.exp(-T) * (1.0 + T))
    return tau12, n1


# --------------------------------------------------------------------------
# Gronwall validator


@dataclass
class GronwallReport:
    """Outcome of :func:`gronwall_validate`."""

    max_equality_error: float
    max_bound_ratio: float
    points: int
    tol: float

    @property
    def ok(self) -> bool:
        return self.max_equality_error <= self.tol and self.max_bound_ratio <= 1.0 + self.tol


def gronwall_validate(
    f: Callable[[float], float],
    y0_age: Callable[[np.ndarray], np.ndarray],
    y0_time: Callable[[np.ndarray], np.ndarray],
    we: float,
    dt: float = 1e-3,
    t_end: float = 2.0,
    s_max: float = 2.0,
    tol: float = 1e-6,
) -> GronwallReport:
    """Check the two-variable Gronwall estimate on an aligned characteristic mesh.

    Solves ``y_t + y_s / We = f(t) y`` with ``y(s, 0) = y0_age(s)`` and
    ``y(0, t) = y0_time(t)`` on the mesh ``ds = dt / We`` by exact shifts plus
    one RK4 step of ``y' = f y`` per time step. The result is compared with
    the characteristic solution ``zeta * exp(int_{t_b}^t f)`` (integrals from
    ``scipy.integrate.quad``) and with the bound ``zeta * exp(int_0^t f)``.

    Raises
    ------
    BoundViolated
        When the bound is exceeded by more than ``tol`` relative.
    """
    ds = dt / we
    ns = int(round(s_max / ds))
    nt = int(round(t_end / dt))
    s = np.arange(ns + 1) * ds
    y = np.asarray(y0_age(s), dtype=float).copy()

    def growth(t0: float) -> float:
        k1 = f(t0)
        k2 = f(t0 + dt / 2) * (1 + dt / 2 * k1)
        k3 = f(t0 + dt / 2) * (1 + dt / 2 * k2)
        k4 = f(t0 + dt) * (1 + dt * k3)
        return 1 + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)

    def F(b: float) -> float:
        return quad(f, 0.0, b, epsabs=1e-14, epsrel=1e-13, limit=200)[0] if b > 0 else 0.0

    checkpoints = set(np.linspace(0, nt, 6).astype(int)[1:])
    eq_err = 0.0
    bound_ratio = 0.0
    points = 0
    for n in range(nt):
        t = n * dt
        y[1:] = y[:-1] * growth(t)
        y[0] = float(np.asarray(y0_time(np.array([t + dt])))[0])
        if n + 1 not in checkpoints:
            continue
        tn = (n + 1) * dt
        born = tn > we * s * (1 + 1e-12)
        zeta = np.where(born, y0_time(np.maximum(tn - we * s, 0.0)), y0_age(np.maximum(s - tn / we, 0.0)))
        f_total = F(tn)
        f_birth = np.array([F(b) for b in np.where(born, tn - we * s, 0.0)])
        exact = zeta * np.exp(f_total - f_birth)
        bound = zeta * math.exp(f_total)
        scale = np.maximum(1.0, np.abs(exact))
        eq_err = max(eq_err, float(np.max(np.abs(y - exact) / scale)))
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(bound > 0, y / bound, np.where(y <= 0, 0.0, np.inf))
        bound_ratio = max(bound_ratio, float(np.max(ratio)))
        points += len(s)
    report = GronwallReport(eq_err, bound_ratio, points, tol)
    if bound_ratio > 1.0 + tol:
        raise BoundViolated(f"Gronwall bound exceeded by factor {bound_ratio}", witness=report)
    return report


# --------------------------------------------------------------------------
# norm monitor


@dataclass
class NormMonitor:
    """Track ``W^{1,p}``-type proxies of ``G`` against the Gronwall bound.

    The proxy at each time is the maximum over age nodes of
    ``||G(s)||_p + ||grad G(s)||_p`` (spatial ``L^p`` norms with cell
    volumes). The bound is ``zeta * exp(3 C0 int ||grad u|| dt)``.
    """

    c0: float = 0.5
    p: float = 3.0
    slack: float = 1e-8
    zeta: float = 0.0
    integral: float = 0.0
    times: list = field(default_factory=list)
    proxies: list = field(default_factory=list)
    bounds: list = field(default_factory=list)
    crossings: list = field(default_factory=list)

    @classmethod
    def start(cls, field_: AgeTimeField, c0: float = 0.5, p: float | None = None, slack: float = 1e-8) -> "NormMonitor":
        p = float(field_.d + 1) if p is None else p
        mon = cls(c0=c0, p=p, slack=slack)
        area = 1.0 if field_.mesh is None else field_.mesh.area
        proxy = norm_proxy(field_, p)
        mon.zeta = max(proxy, math.sqrt(field_.d) * area ** (1.0 / p))
        mon.times.append(field_.t)
        mon.proxies.append(proxy)
        mon.bounds.append(mon.zeta)
        return mon

    @property
    def crossed(self) -> bool:
        return bool(self.crossings)


def norm_proxy(field_: AgeTimeField, p: float) -> float:
    """Max over ages of ``||G||_p + ||grad G||_p``."""
    if field_.mesh is None:
        return float(np.max(norm2(field_.values[:, 0])))
    vol = field_.mesh.cell_area
    gn = (np.sum(norm2(field_.values) ** p, axis=1) * vol) ** (1.0 / p)
    grad = field_.spatial_gradient()
    dn = (np.sum(np.sqrt(np.sum(grad**2, axis=(2, 3, 4))) ** p, axis=1) * vol) ** (1.0 / p)
    return float(np.max(gn + dn))


def norm_monitor_advance(monitor: NormMonitor, grad_u_norm: float, dt: float) -> NormMonitor:
    """Accumulate ``int ||grad u|| dt`` without sampling the field."""
    monitor.integral += grad_u_norm * dt
    return monitor


def norm_monitor_record(field_: AgeTimeField, monitor: NormMonitor) -> NormMonitor:
    """Sample the field's proxy against the current bound; flags crossings."""
    bound = monitor.zeta * math.exp(3.0 * monitor.c0 * monitor.integral)
    proxy = norm_proxy(field_, monitor.p)
    monitor.times.append(field_.t)
    monitor.proxies.append(proxy)
    monitor.bounds.append(bound)
    if proxy > bound * (1.0 + monitor.slack):
        monitor.crossings.append((field_.t, proxy, bound))
    return monitor


def norm_monitor_update(field_: AgeTimeField, grad_u_norm: float, dt: float, monitor: NormMonitor) -> NormMonitor:
    """Advance the bound by ``dt`` and record the field's proxy; flags crossings."""
    norm_monitor_advance(monitor, grad_u_norm, dt)
    return norm_monitor_record(field_, monitor)


# --------------------------------------------------------------------------
# checkpoints


def write_checkpoint(field_: AgeTimeField, path, step: int = 0) -> None:
    """CSV dump of every ``(age, cell)`` value with a commented header."""
    d = field_.d
    ns, nc = field_.values.shape[:2]
    if field_.mesh is None:
        xy = np.zeros((1, 2))
        mesh_desc = "homogeneous"
    else:
        xy = field_.mesh.flat_centers()
        m = field_.mesh
        mesh_desc = f"{m.nx}x{m.ny} lx={m.lx!r} ly={m.ly!r} periodic_y={int(m.periodic_y)}"
    comps = [f"g{i + 1}{j + 1}" for i in range(d) for j in range(d)]
    lines = [
        "# memflow deformation checkpoint v1",
        f"# we={field_.we!r} t={field_.t!r} step={step} ages={ns} cells={nc} d={d} grading={field_.grid.grading}",
        f"# mesh={mesh_desc}",
        ",".join(["age_index", "s", "q", "cell", "x", "y"] + comps),
    ]
    nodes, q = field_.grid.nodes, field_.grid.kernel_weights
    flat = field_.values.reshape(ns, nc, d * d)
    for i in range(ns):
        for c in range(nc):
            row = [str(i), f"{nodes[i]:.17g}", f"{q[i]:.17g}", str(c), f"{xy[c, 0]:.17g}", f"{xy[c, 1]:.17g}"]
            row += [f"{v:.17g}" for v in flat[i, c]]
            lines.append(",".join(row))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_checkpoint(path, mesh: CellGrid | None = None) -> tuple[AgeTimeField, int]:
    """Inverse of :func:`write_checkpoint`; returns the field and step index.

    The mesh is rebuilt from the header unless one is passed.
    """
    with open(path) as fh:
        header = [fh.readline() for _ in range(3)]
    meta = dict(kv.split("=", 1) for kv in header[1][1:].split())
    desc = header[2][1:].strip().removeprefix("mesh=")
    if mesh is None and desc != "homogeneous":
        shape, *rest = desc.split()
        nx, ny = (int(n) for n in shape.split("x"))
        kw = dict(kv.split("=", 1) for kv in rest)
        mesh = CellGrid(nx, ny, float(kw["lx"]), float(kw["ly"]), bool(int(kw["periodic_y"])))
    data = np.loadtxt(path, delimiter=",", skiprows=4, ndmin=2)
    ns, nc, d = int(meta["ages"]), int(meta["cells"]), int(meta["d"])
    nodes = data[::nc, 1]
    q = data[::nc, 2]
    from .kernels import trapezoid_weights

    grid = AgeGrid(nodes, trapezoid_weights(nodes), q, float(nodes[-1]), meta["grading"])
    vals = data[:, 6:].reshape(ns, nc, d, d)
    return AgeTimeField(grid, vals, float(meta["we"]), mesh, float(meta["t"])), int(meta["step"])
