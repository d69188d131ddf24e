"""Memory functions and the age-grid quadrature built on them.

Every kernel is rescaled to unit mass at construction; the mass of the raw
parameterisation is kept as :attr:`MemoryKernel.raw_mass`. Exponential
families are represented internally as a list of modes ``a_k exp(-c_k s)``
so tails and interval masses are available in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import GridMismatch, NoDecay, SingularPoint

S_CAP = 1e3
_EXP_CUTOFF = 40.0


class NotExponential:
    """Marker returned by :func:`decay_envelope` for algebraic kernels."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "NotExponential"


NOT_EXPONENTIAL = NotExponential()


@dataclass(frozen=True)
class Envelope:
    """Bound ``m(s) <= c exp(-alpha s)``."""

    c: float
    alpha: float


class MemoryKernel:
    """Base class. Subclasses set ``raw_mass`` and implement the raw forms."""

    variant: str = "abstract"
    singular_at_zero: bool = False
    raw_mass: float

    def __call__(self, s):
        return evaluate_m(self, s)

    # raw (unnormalised) pieces, overridden by subclasses
    def _raw(self, s: np.ndarray) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError

    def _raw_tail(self, s: np.ndarray) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError

    def tail(self, s):
        """Normalised mass beyond ``s``: ``int_s^inf m``."""
        return self._raw_tail(np.asarray(s, dtype=float)) / self.raw_mass

    def mass_between(self, a, b):
        """Normalised mass on ``[a, b]``."""
        return self.tail(a) - self.tail(b)

    def describe(self) -> dict:
        return {"variant": self.variant, "raw_mass": self.raw_mass}


class _ExponentialFamily(MemoryKernel):
    """Kernels of the form ``sum_k a_k exp(-c_k s)`` with ``c_k`` ascending."""

    amplitudes: np.ndarray
    rates: np.ndarray

    def _init_modes(self, amplitudes: np.ndarray, rates: np.ndarray) -> None:
        order = np.argsort(rates, kind="stable")
        object.__setattr__(self, "amplitudes", np.asarray(amplitudes, float)[order])
        object.__setattr__(self, "rates", np.asarray(rates, float)[order])
        object.__setattr__(self, "raw_mass", float(np.sum(self.amplitudes / self.rates)))

    def _active(self, smin: float) -> int:
        """Number of modes whose exponent at ``smin`` is below the cutoff."""
        if smin <= 0:
            return len(self.rates)
        return max(1, int(np.searchsorted(self.rates, _EXP_CUTOFF / smin, side="right")))

    def _mode_sum(self, s: np.ndarray, weights: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        flat = s.ravel()
        out = np.zeros_like(flat)
        order = np.argsort(flat)
        chunk = 256
        for start in range(0, len(order), chunk):
            idx = order[start : start + chunk]
            k = self._active(float(flat[idx[0]]))
            out[idx] = np.exp(-np.outer(flat[idx], self.rates[:k])) @ weights[:k]
        return out.reshape(s.shape)

    def _raw(self, s):
        return self._mode_sum(s, self.amplitudes)

    def _raw_tail(self, s):
        return self._mode_sum(s, self.amplitudes / self.rates)

    def modes(self) -> tuple[np.ndarray, np.ndarray]:
        """Normalised ``(amplitudes, rates)``."""
        return self.amplitudes / self.raw_mass, self.rates.copy()


@dataclass(frozen=True, eq=False)
class SingleExponential(_ExponentialFamily):
    """Single Maxwell mode ``m(s) = exp(-s/lam) / lam``."""

    lam: float = 1.0
    variant = "single_exponential"

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        self._init_modes(np.array([1.0 / self.lam]), np.array([1.0 / self.lam]))


@dataclass(frozen=True, eq=False)
class MultiModeMaxwell(_ExponentialFamily):
    """Discrete relaxation spectrum ``m(s) = sum eta_k / lam_k^2 exp(-s/lam_k)``."""

    etas: Sequence[float] = (1.0,)
    lams: Sequence[float] = (1.0,)
    variant = "multimode_maxwell"

    def __post_init__(self):
        etas = np.asarray(self.etas, dtype=float)
        lams = np.asarray(self.lams, dtype=float)
        if etas.shape != lams.shape or etas.ndim != 1 or len(etas) == 0:
            raise ValueError("etas and lams must be equal-length non-empty sequences")
        if np.any(etas <= 0) or np.any(lams <= 0):
            raise ValueError("mode weights and times must be positive")
        object.__setattr__(self, "etas", tuple(etas))
        object.__setattr__(self, "lams", tuple(lams))
        self._init_modes(etas / lams**2, 1.0 / lams)


@dataclass(frozen=True, eq=False)
class DoiEdwards(_ExponentialFamily):
    """Reptation kernel ``(8 / pi^2 lam) sum_{k<K} exp(-(2k+1)^2 s / lam)``.

    The function behaves like ``s^{-1/2}`` near the origin, so pointwise
    evaluation at ``s = 0`` is refused.
    """

    lam: float = 1.0
    truncation: int = 10_000
    variant = "doi_edwards"
    singular_at_zero = True

    def __post_init__(self):
        if not self.lam > 0 or self.truncation < 1:
            raise ValueError("lam must be positive and truncation >= 1")
        odd = 2.0 * np.arange(self.truncation) + 1.0
        amp = np.full(self.truncation, 8.0 / (math.pi**2 * self.lam))
        self._init_modes(amp, odd**2 / self.lam)

    @property
    def series_tail_bound(self) -> float:
        """Upper bound on the mass dropped by truncating the series at K."""
        return 2.0 / (math.pi**2 * self.truncation)


@dataclass(frozen=True, eq=False)
class PowerLaw(MemoryKernel):
    """Algebraic memory with a lower age cutoff.

    The relaxation function is ``g(s) = sum eta_k (s/lam_k)^{-beta_k}`` and
    ``m = -g'`` for ``s >= s_min``; ``m = 0`` below the cutoff, which keeps the
    mass finite.
    """

    etas: Sequence[float] = (1.0,)
    betas: Sequence[float] = (0.5,)
    lams: Sequence[float] = (1.0,)
    s_min: float = 1e-3
    variant = "power_law"

    def __post_init__(self):
        etas, betas, lams = (np.asarray(v, float) for v in (self.etas, self.betas, self.lams))
        if not (etas.shape == betas.shape == lams.shape) or etas.ndim != 1 or len(etas) == 0:
            raise ValueError("etas, betas, lams must be equal-length non-empty sequences")
        if np.any(etas <= 0) or np.any(lams <= 0):
            raise ValueError("eta and lam must be positive")
        if np.any(betas <= 0) or np.any(betas >= 1):
            raise ValueError("beta must lie in (0, 1)")
        if not self.s_min > 0:
            raise ValueError("s_min must be positive")
        for name, v in (("etas", etas), ("betas", betas), ("lams", lams)):
            object.__setattr__(self, name, tuple(v))
        object.__setattr__(self, "raw_mass", float(self._g(np.array(self.s_min))))

    def _g(self, s):
        s = np.asarray(s, dtype=float)[..., None]
        e, b, l = (np.asarray(v) for v in (self.etas, self.betas, self.lams))
        return np.sum(e * (s / l) ** (-b), axis=-1)

    def _raw(self, s):
        s = np.asarray(s, dtype=float)
        e, b, l = (np.asarray(v) for v in (self.etas, self.betas, self.lams))
        sc = np.maximum(s, self.s_min)[..., None]
        val = np.sum(e * b / l * (sc / l) ** (-(b + 1.0)), axis=-1)
        return np.where(s >= self.s_min, val, 0.0)

    def _raw_tail(self, s):
        return self._g(np.maximum(np.asarray(s, dtype=float), self.s_min))


def evaluate_m(kernel: MemoryKernel, s):
    """Normalised memory function ``m(s)``.

    Raises
    ------
    SingularPoint
        At ``s = 0`` for kernels singular at the origin.
    """
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("ages must be non-negative")
    if kernel.singular_at_zero and np.any(s == 0):
        raise SingularPoint(f"{kernel.variant} is singular at s = 0")
    out = kernel._raw(s) / kernel.raw_mass
    return float(out) if out.ndim == 0 else out


def decay_envelope(kernel: MemoryKernel):
    """Tightest exponential envelope ``(c, alpha)`` or :data:`NOT_EXPONENTIAL`.

    For the Doi-Edwards series ``c`` is the value of the truncated sum at the
    origin and therefore grows with the truncation.
    """
    if isinstance(kernel, _ExponentialFamily):
        amps, rates = kernel.modes()
        return Envelope(c=float(amps.sum()), alpha=float(rates.min()))
    return NOT_EXPONENTIAL


@dataclass(frozen=True, eq=False)
class AgeGrid:
    """Age nodes with quadrature weights.

    Attributes
    ----------
    nodes : ndarray
        Strictly increasing ages, ``nodes[0] == 0``.
    weights : ndarray
        Composite trapezoid weights ``w_i``.
    kernel_weights : ndarray
        Weights ``q_i`` such that ``sum q_i f(s_i)`` approximates
        ``int m f``. Away from a singular origin ``q_i = w_i m(s_i)``; on the
        first interval of a singular kernel a product rule is used instead.
    """

    nodes: np.ndarray
    weights: np.ndarray
    kernel_weights: np.ndarray
    s_max: float
    grading: str
    tail_mass: float = 0.0
    kernel_name: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("nodes", "weights", "kernel_weights"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.nodes[0] != 0.0 or np.any(np.diff(self.nodes) <= 0):
            raise ValueError("age nodes must start at 0 and increase strictly")

    @property
    def size(self) -> int:
        return len(self.nodes)

    @property
    def mass(self) -> float:
        return float(np.sum(self.kernel_weights))

    @property
    def mass_error(self) -> float:
        return abs(self.mass - 1.0)

    @cached_property
    def ds_min(self) -> float:
        return float(np.min(np.diff(self.nodes)))

    @classmethod
    def uniform(cls, s_max: float, n: int, kernel: MemoryKernel | None = None) -> "AgeGrid":
        """``n`` equal intervals on ``[0, s_max]``; weights for ``kernel`` if given."""
        nodes = np.linspace(0.0, s_max, n + 1)
        return _grid_from_nodes(nodes, kernel, "uniform")


def trapezoid_weights(nodes: np.ndarray) -> np.ndarray:
    h = np.diff(nodes)
    w = np.zeros_like(nodes)
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    return w


def _product_first_interval(kernel: _ExponentialFamily, h: float) -> tuple[float, float]:
    """Exact ``int_0^h m(s)(1 - s/h) ds`` and ``int_0^h m(s) s/h ds``."""
    amps, rates = kernel.modes()
    x = rates * h
    big = x > 1e-3
    # int_0^h e^{-cs} ds = h*(1-e^{-x})/x ; int_0^h e^{-cs} s/h ds = h*(1-(1+x)e^{-x})/x^2
    e0 = np.empty_like(x)
    e1 = np.empty_like(x)
    xb = x[big]
    e0[big] = -np.expm1(-xb) / xb
    e1[big] = (-np.expm1(-xb) - xb * np.exp(-xb)) / xb**2
    xs = x[~big]
    e0[~big] = 1 - xs / 2 + xs**2 / 6 - xs**3 / 24 + xs**4 / 120
    e1[~big] = 0.5 - xs / 3 + xs**2 / 8 - xs**3 / 30 + xs**4 / 144
    right = float(np.sum(amps * h * e1))
    total = float(np.sum(amps * h * e0))
    return total - right, right


def _grid_from_nodes(nodes: np.ndarray, kernel: MemoryKernel | None, grading: str, **meta) -> AgeGrid:
    w = trapezoid_weights(nodes)
    if kernel is None:
        return AgeGrid(nodes, w, w.copy(), float(nodes[-1]), grading, meta=meta)
    q = np.zeros_like(nodes)
    if kernel.singular_at_zero:
        q[1:] = w[1:] * evaluate_m(kernel, nodes[1:])
        # replace the trapezoid contribution of [s0, s1] by the exact product rule
        h = nodes[1] - nodes[0]
        left, right = _product_first_interval(kernel, h)
        q[1] += right - 0.5 * h * evaluate_m(kernel, nodes[1])
        q[0] = left
    else:
        q = w * evaluate_m(kernel, nodes)
        if isinstance(kernel, PowerLaw):
            # the trapezoid over [0, s_min] would smear the jump of m at the cutoff
            i = int(np.searchsorted(nodes, kernel.s_min))
            if i < len(nodes) and nodes[i] == kernel.s_min and i > 0:
                q[i] -= 0.5 * (nodes[i] - nodes[i - 1]) * evaluate_m(kernel, nodes[i])
    return AgeGrid(
        nodes,
        w,
        q,
        float(nodes[-1]),
        grading,
        tail_mass=float(kernel.tail(nodes[-1])),
        kernel_name=kernel.variant,
        meta=meta,
    )


def truncation_age(kernel: MemoryKernel, tail_tol: float, s_cap: float = S_CAP) -> float:
    """Smallest age with tail mass ``tail_tol`` (solved with ``brentq``)."""
    if not 0 < tail_tol < 1:
        raise ValueError("tail_tol must lie in (0, 1)")
    if kernel.tail(s_cap) >= tail_tol:
        raise NoDecay(f"{kernel.variant}: tail mass beyond s_cap={s_cap} exceeds {tail_tol}")
    lo = kernel.s_min if isinstance(kernel, PowerLaw) else 0.0
    return float(brentq(lambda s: kernel.tail(s) - tail_tol, lo, s_cap, xtol=1e-12, rtol=1e-12))


def graded_nodes(s_max: float, first: float, ratio: float, h_cap: float) -> np.ndarray:
    """Nodes ``0, first, first*r, first*r^2, ...`` with spacing capped at ``h_cap``."""
    pts = [0.0, first]
    s = first
    while True:
        h = min(s * (ratio - 1.0), h_cap)
        if s + h >= s_max * (1 - 1e-12):
            break
        s += h
        pts.append(s)
    if s_max - pts[-1] < 0.25 * h and len(pts) > 2:
        pts[-1] = s_max
    else:
        pts.append(s_max)
    return np.asarray(pts)


def build_age_grid(
    kernel: MemoryKernel,
    tail_tol: float = 1e-8,
    quad_tol: float = 1e-6,
    *,
    ratio: float = 1.15,
    first_fraction: float = 1e-6,
    s_cap: float = S_CAP,
    max_nodes: int = 200_000,
) -> AgeGrid:
    """Build a truncated age grid whose quadrature reproduces unit mass.

    Regular kernels get uniform nodes, doubled until the mass error is below
    ``quad_tol``. Singular kernels get a geometric grading starting at
    ``first_fraction * s_max`` with ``ratio``; both the grading excess
    ``ratio - 1`` and the spacing cap are halved until the tolerance is met.

    Raises
    ------
    NoDecay
        When the tail cannot be truncated below ``s_cap``.
    ValueError
        When ``tail_tol > quad_tol``.
    """
    if not 0 < quad_tol < 1:
        raise ValueError("quad_tol must lie in (0, 1)")
    if tail_tol > quad_tol:
        raise ValueError("tail_tol above quad_tol makes unit mass unreachable")
    s_max = truncation_age(kernel, tail_tol, s_cap)
    target = 1.0 - kernel.tail(s_max)

    def ok(g: AgeGrid) -> bool:
        return abs(g.mass - 1.0) <= quad_tol and abs(g.mass - target) <= quad_tol

    if kernel.singular_at_zero or isinstance(kernel, PowerLaw):
        r = ratio
        h_cap = s_max / 64
        refinements = 0
        while True:
            if isinstance(kernel, PowerLaw):
                nodes = graded_nodes(s_max, kernel.s_min, r, h_cap)
            else:
                nodes = graded_nodes(s_max, first_fraction * s_max, r, h_cap)
            g = _grid_from_nodes(nodes, kernel, "geometric", ratio=r, h_cap=h_cap, refinements=refinements)
            if ok(g):
                return g
            if len(nodes) > max_nodes:
                raise NoDecay(f"quadrature did not reach {quad_tol} within {max_nodes} nodes")
            r = 1.0 + 0.5 * (r - 1.0)
            h_cap *= 0.5
            refinements += 1
    n = 64
    while True:
        g = _grid_from_nodes(np.linspace(0.0, s_max, n + 1), kernel, "uniform")
        if ok(g):
            return g
        if n > max_nodes:
            raise NoDecay(f"quadrature did not reach {quad_tol} within {max_nodes} nodes")
        # trapezoid error scales like n^-2; aim 10% below the tolerance
        err = max(abs(g.mass - 1.0), abs(g.mass - target))
        n = max(2 * n, int(math.ceil(n * math.sqrt(err / (0.9 * quad_tol))))) if err > 0 else 2 * n


def kernel_integral(kernel: MemoryKernel, grid: AgeGrid, samples) -> np.ndarray:
    """Quadrature ``sum_i q_i samples_i`` over the leading axis of ``samples``."""
    samples = np.asarray(samples, dtype=float)
    if samples.shape[:1] != (grid.size,):
        raise GridMismatch(f"expected {grid.size} samples along axis 0, got {samples.shape[:1]}")
    if grid.kernel_name and grid.kernel_name != kernel.variant:
        raise GridMismatch(f"grid built for {grid.kernel_name}, not {kernel.variant}")
    out = np.tensordot(grid.kernel_weights, samples, axes=(0, 0))
    return float(out) if np.ndim(out) == 0 else out
