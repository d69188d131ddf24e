"""Strain measures ``S(G)`` and their derivatives ``S'(G)``.

Measures act on batched deformation gradients of shape ``(..., d, d)`` and
return arrays of the same shape. Derivatives are fourth-order tensors with
``S'[..., i, j, k, l] = dS_kl / dG_ij``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import BoundViolated, NegativeRadicand
from .tensor import cauchy_green, finger, norm2, norm4, random_unimodular

PhiFn = Callable[[np.ndarray, np.ndarray, int], np.ndarray]

FD_STEP = 1e-5
RADICAND_TOL = 1e-10


@dataclass(frozen=True)
class Growth:
    """Declared polynomial growth ``|S| <= c|G|^a`` and ``|S'| <= c|G|^b``."""

    a: float
    b: float
    c: float


def _phi_constant(value: float = 1.0) -> PhiFn:
    return lambda i1, i2, d: np.full(np.shape(i1), float(value))


def _phi_psm(alpha: float = 4.0, beta: float = 1.0) -> PhiFn:
    return lambda i1, i2, d: alpha / (alpha + beta * i1 + (1 - beta) * i2 - d)


def _phi_linear(c0: float = 1.0, c1: float = 0.0, c2: float = 0.0) -> PhiFn:
    return lambda i1, i2, d: c0 + c1 * (i1 - d) + c2 * (i2 - d)


PHI_LIBRARY: dict[str, Callable[..., PhiFn]] = {
    "constant": _phi_constant,
    "psm": _phi_psm,
    "linear": _phi_linear,
}


def register_phi(name: str, factory: Callable[..., PhiFn]) -> None:
    """Add a damping-function factory to the K-BKZ library."""
    if name in PHI_LIBRARY:
        raise ValueError(f"phi function {name!r} already registered")
    PHI_LIBRARY[name] = factory


def make_phi(name: str, *params: float) -> PhiFn:
    try:
        factory = PHI_LIBRARY[name]
    except KeyError:
        raise ValueError(f"unknown phi function {name!r}; known: {sorted(PHI_LIBRARY)}") from None
    return factory(*params)


def _eye_like(g: np.ndarray) -> np.ndarray:
    return np.broadcast_to(np.eye(g.shape[-1]), g.shape)


def _trace(a: np.ndarray) -> np.ndarray:
    return np.trace(a, axis1=-2, axis2=-1)


@dataclass(frozen=True)
class StrainMeasure:
    """Base class for strain measures."""

    name = "abstract"
    needs_inverse = False

    def evaluate(self, g: np.ndarray) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError

    def derivative(self, g: np.ndarray, fd_mode: str = "full") -> np.ndarray:
        """Fourth-order derivative; finite differences unless overridden."""
        return fd_derivative(self.evaluate, g, mode=fd_mode)

    @property
    def growth(self) -> Growth | None:
        return None

    def __call__(self, g):
        return self.evaluate(g)


@dataclass(frozen=True)
class UCM(StrainMeasure):
    """Upper convected Maxwell: ``S = B - I``."""

    name = "ucm"

    def evaluate(self, g):
        g = np.asarray(g, dtype=float)
        return finger(g) - _eye_like(g)

    def derivative(self, g, fd_mode: str = "full"):
        return finger_derivative(np.asarray(g, dtype=float))

    @property
    def growth(self):
        return Growth(2.0, 1.0, 3.0)


@dataclass(frozen=True)
class LCM(StrainMeasure):
    """Lower convected Maxwell: ``S = I - C``."""

    name = "lcm"
    needs_inverse = True

    def evaluate(self, g):
        g = np.asarray(g, dtype=float)
        return _eye_like(g) - cauchy_green(g)

    def derivative(self, g, fd_mode: str = "full"):
        # dC = -C dB C
        g = np.asarray(g, dtype=float)
        c = cauchy_green(g)
        db = finger_derivative(g)
        return np.einsum("...km,...ijmn,...nl->...ijkl", c, db, c)


@dataclass(frozen=True)
class KBKZ(StrainMeasure):
    """Factorised K-BKZ measure ``phi1 (B - I) + phi2 (I - C)``.

    ``phi1`` and ``phi2`` are ``(name, *params)`` tuples looked up in
    :data:`PHI_LIBRARY`.
    """

    phi1: tuple = ("constant", 1.0)
    phi2: tuple = ("constant", 0.0)
    name = "kbkz"
    needs_inverse = True

    def evaluate(self, g):
        g = np.asarray(g, dtype=float)
        b = finger(g)
        c = cauchy_green(g)
        d = g.shape[-1]
        i1, i2 = _trace(b), _trace(c)
        f1 = make_phi(*self.phi1)(i1, i2, d)[..., None, None]
        f2 = make_phi(*self.phi2)(i1, i2, d)[..., None, None]
        eye = _eye_like(g)
        return f1 * (b - eye) + f2 * (eye - c)


@dataclass(frozen=True)
class PSM(StrainMeasure):
    """Papanastasiou-Scriven-Macosko: ``S = h B`` with
    ``h = alpha / (alpha + beta I1 + (1 - beta) I2 - d)``.

    In three dimensions the shift equals 3, so ``h(I) = 1``.
    """

    alpha: float = 4.0
    beta: float = 1.0
    name = "psm"
    needs_inverse = True

    def __post_init__(self):
        if not self.alpha > 0 or not 0 <= self.beta <= 1:
            raise ValueError("PSM needs alpha > 0 and beta in [0, 1]")

    def evaluate(self, g):
        g = np.asarray(g, dtype=float)
        b = finger(g)
        i2 = _trace(cauchy_green(g)) if self.beta < 1 else 0.0
        h = self.alpha / (self.alpha + self.beta * _trace(b) + (1 - self.beta) * i2 - g.shape[-1])
        return h[..., None, None] * b


@dataclass(frozen=True)
class PSMNorm(StrainMeasure):
    """Normalised PSM measure ``S = B / (1 + tr B)``, bounded by one."""

    name = "psm_norm"

    def evaluate(self, g):
        b = finger(np.asarray(g, dtype=float))
        return b / (1.0 + _trace(b))[..., None, None]

    def derivative(self, g, fd_mode: str = "full"):
        g = np.asarray(g, dtype=float)
        b = finger(g)
        den = (1.0 + _trace(b))[..., None, None, None, None]
        return finger_derivative(g) / den - 2.0 * np.einsum("...ij,...kl->...ijkl", g, b) / den**2

    @property
    def growth(self):
        return Growth(0.0, -1.0, 2.0 * (1.0 + math.sqrt(3.0)))


@dataclass(frozen=True)
class Wagner(StrainMeasure):
    """Wagner damping ``S = exp(-alpha sqrt(beta I1 + (1-beta) I2 - d)) B``.

    Radicands in ``(-radicand_tol, 0)`` are treated as zero rounding error.
    """

    alpha: float = 0.2
    beta: float = 1.0
    radicand_tol: float = RADICAND_TOL
    name = "wagner"
    needs_inverse = True

    def __post_init__(self):
        if not self.alpha > 0 or not 0 <= self.beta <= 1:
            raise ValueError("Wagner needs alpha > 0 and beta in [0, 1]")

    def radicand(self, g):
        g = np.asarray(g, dtype=float)
        b = finger(g)
        i2 = _trace(cauchy_green(g)) if self.beta < 1 else 0.0
        return self.beta * _trace(b) + (1 - self.beta) * i2 - g.shape[-1]

    def evaluate(self, g):
        g = np.asarray(g, dtype=float)
        r = self.radicand(g)
        if np.any(r < -self.radicand_tol):
            raise NegativeRadicand(f"Wagner radicand {float(np.min(r)):.3e} below -{self.radicand_tol}")
        r = np.maximum(r, 0.0)
        return np.exp(-self.alpha * np.sqrt(r))[..., None, None] * finger(g)


@dataclass(frozen=True)
class Currie(StrainMeasure):
    """Currie approximation of the Doi-Edwards strain measure.

    ``S = 4/(3(J-1)) B - 4/(3(J-1) sqrt(I2 + 3.25)) C`` with
    ``J = I1 + 2 sqrt(I2 + 3.25)``. The constants are calibrated for three
    dimensions and are used unchanged in two.
    """

    name = "currie"
    needs_inverse = True

    def evaluate(self, g):
        g = np.asarray(g, dtype=float)
        b = finger(g)
        c = cauchy_green(g)
        root = np.sqrt(_trace(c) + 3.25)
        j = _trace(b) + 2.0 * root
        f = (4.0 / (3.0 * (j - 1.0)))[..., None, None]
        return f * b - (f / root[..., None, None]) * c


MEASURES: dict[str, type[StrainMeasure]] = {
    cls.name: cls for cls in (UCM, LCM, KBKZ, PSM, PSMNorm, Wagner, Currie)
}


def evaluate_s(measure: StrainMeasure, g) -> np.ndarray:
    return measure.evaluate(g)


def derivative_s(measure: StrainMeasure, g, fd_mode: str = "full") -> np.ndarray:
    return measure.derivative(g, fd_mode=fd_mode)


def finger_derivative(g: np.ndarray) -> np.ndarray:
    """``dB_kl / dG_ij = delta_kj G_il + delta_lj G_ik`` for ``B = G^T G``."""
    d = g.shape[-1]
    eye = np.eye(d)
    return np.einsum("kj,...il->...ijkl", eye, g) + np.einsum("lj,...ik->...ijkl", eye, g)


def fd_derivative(
    fn: Callable[[np.ndarray], np.ndarray],
    g: np.ndarray,
    step: float = FD_STEP,
    mode: str = "full",
) -> np.ndarray:
    """Central finite-difference derivative of a matrix function.

    Parameters
    ----------
    fn
        Batched map ``(..., d, d) -> (..., d, d)``.
    g
        Evaluation points.
    step
        Relative step; the absolute step is ``step * max(1, |g|)``.
    mode
        ``"full"`` perturbs each entry freely. ``"manifold"`` rescales each
        perturbed point back to ``det = det g`` so only volume-preserving
        directions are sampled.
    """
    g = np.asarray(g, dtype=float)
    d = g.shape[-1]
    h = step * np.maximum(1.0, norm2(g))[..., None, None]
    out = np.empty(g.shape + (d, d))
    det0 = np.linalg.det(g) if mode == "manifold" else None
    for i in range(d):
        for j in range(d):
            e = np.zeros((d, d))
            e[i, j] = 1.0
            gp = g + h * e
            gm = g - h * e
            if mode == "manifold":
                gp = _retract(gp, det0)
                gm = _retract(gm, det0)
            elif mode != "full":
                raise ValueError(f"unknown fd mode {mode!r}")
            out[..., i, j, :, :] = (fn(gp) - fn(gm)) / (2.0 * h)
    return out


def _retract(g: np.ndarray, det_target: np.ndarray) -> np.ndarray:
    d = g.shape[-1]
    ratio = det_target / np.linalg.det(g)
    return g * (np.sign(ratio) * np.abs(ratio) ** (1.0 / d))[..., None, None]


@dataclass
class GrowthReport:
    """Worst observed ratios against the declared growth bounds."""

    samples: int
    worst_s_ratio: float
    worst_ds_ratio: float
    norm_range: tuple[float, float]
    growth: Growth
    details: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.worst_s_ratio <= 1.0 and self.worst_ds_ratio <= 1.0


def growth_bounds_check(
    measure: StrainMeasure,
    samples: int = 10_000,
    *,
    growth: Growth | None = None,
    d: int = 3,
    norm_range: tuple[float, float] = (1e-2, 1e3),
    seed: int = 0,
    fd_mode: str = "manifold",
    batch: int = 20_000,
) -> GrowthReport:
    """Sample unit-determinant tensors and compare against declared growth.

    Target norms are log-spaced over ``norm_range``; targets below
    ``sqrt(d)`` are clipped since no unit-determinant tensor is smaller.

    Raises
    ------
    BoundViolated
        Carrying the worst offending sample as ``witness``.
    """
    growth = growth or measure.growth
    if growth is None:
        raise ValueError(f"measure {measure.name!r} declares no growth bound")
    rng = np.random.default_rng(seed)
    targets = np.exp(rng.uniform(np.log(norm_range[0]), np.log(norm_range[1]), size=samples))
    worst_s = worst_ds = -np.inf
    wit_s = wit_ds = None
    lo, hi = np.inf, 0.0
    for start in range(0, samples, batch):
        g = random_unimodular(rng, min(batch, samples - start), d, targets[start : start + batch])
        n = norm2(g)
        lo, hi = min(lo, float(n.min())), max(hi, float(n.max()))
        rs = norm2(measure.evaluate(g)) / (growth.c * n**growth.a)
        rd = norm4(measure.derivative(g, fd_mode=fd_mode)) / (growth.c * n**growth.b)
        ks, kd = int(np.argmax(rs)), int(np.argmax(rd))
        if rs[ks] > worst_s:
            worst_s, wit_s = float(rs[ks]), g[ks].copy()
        if rd[kd] > worst_ds:
            worst_ds, wit_ds = float(rd[kd]), g[kd].copy()
    report = GrowthReport(samples, worst_s, worst_ds, (lo, hi), growth)
    if worst_s > 1.0:
        raise BoundViolated(f"|S| bound exceeded by factor {worst_s:.6g}", witness=wit_s, ratio=worst_s)
    if worst_ds > 1.0:
        raise BoundViolated(f"|S'| bound exceeded by factor {worst_ds:.6g}", witness=wit_ds, ratio=worst_ds)
    return report


def kbkz_invariant_derivatives(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients ``dI1/dG = 2G`` and ``dI2/dG = -2 G C^2``."""
    g = np.asarray(g, dtype=float)
    c = cauchy_green(g)
    return 2.0 * g, -2.0 * g @ c @ c
