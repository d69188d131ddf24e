"""Small dense tensor algebra on batched ``(..., d, d)`` arrays.

All routines accept a single ``d x d`` matrix or any stack of them and
broadcast over the leading axes. Fourth-order tensors are stored as
``(..., d, d, d, d)`` arrays indexed ``[i, j, k, l]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import SingularTensor

SINGULAR_TOL = 1e-12


def identity(d: int) -> np.ndarray:
    """Return the ``d x d`` identity."""
    if d not in (2, 3):
        raise ValueError(f"dimension must be 2 or 3, got {d}")
    return np.eye(d)


def unit(d: int, i: int, j: int) -> np.ndarray:
    """Matrix unit ``E_ij`` (1 in row ``i``, column ``j``, zeros elsewhere)."""
    e = np.zeros((d, d))
    e[i, j] = 1.0
    return e


def transpose(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


def sym(a: np.ndarray) -> np.ndarray:
    """Symmetric part ``(a + a^T) / 2``."""
    return 0.5 * (a + transpose(a))


def right_multiply(a: np.ndarray, m: np.ndarray) -> np.ndarray:
    """``a[s, c] @ m[c]`` for ``a`` of shape ``(S, C, d, d)`` and ``m`` of shape ``(C, d, d)``.

    Rows of all ages are stacked per cell so a single batched product per
    cell does the work.
    """
    s_, c_, d, _ = a.shape
    stacked = a.transpose(1, 0, 2, 3).reshape(c_, s_ * d, d)
    return (stacked @ m).reshape(c_, s_, d, d).transpose(1, 0, 2, 3)


def det(a: np.ndarray) -> np.ndarray:
    """Closed-form determinant for 2x2 and 3x3 stacks."""
    a = np.asarray(a, dtype=float)
    if a.shape[-1] == 2:
        return a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0]
    if a.shape[-1] == 3:
        return (
            a[..., 0, 0] * (a[..., 1, 1] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 1])
            - a[..., 0, 1] * (a[..., 1, 0] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 0])
            + a[..., 0, 2] * (a[..., 1, 0] * a[..., 2, 1] - a[..., 1, 1] * a[..., 2, 0])
        )
    return np.linalg.det(a)


def finger(g: np.ndarray) -> np.ndarray:
    """Finger tensor ``B = g^T g``.

    Parameters
    ----------
    g : ndarray, shape (..., d, d)
        Relative deformation gradient.

    Returns
    -------
    ndarray, shape (..., d, d)
        Symmetric positive semi-definite ``B``.
    """
    g = np.asarray(g, dtype=float)
    d = g.shape[-1]
    out = np.empty(g.shape)
    for k in range(d):
        for l in range(k, d):
            acc = g[..., 0, k] * g[..., 0, l]
            for i in range(1, d):
                acc = acc + g[..., i, k] * g[..., i, l]
            out[..., k, l] = acc
            if l != k:
                out[..., l, k] = acc
    return out


def inverse(b: np.ndarray, singular_tol: float = SINGULAR_TOL) -> np.ndarray:
    """Batched inverse with a singularity check.

    A tensor counts as singular when its reciprocal condition number
    ``1 / (|b| |b^{-1}|)`` is at most ``singular_tol * 1e-2`` or the inverse
    is not finite.
    """
    b = np.asarray(b, dtype=float)
    try:
        inv = np.linalg.inv(b)
    except np.linalg.LinAlgError:
        loc = None
        if b.ndim > 2:
            rank = np.linalg.matrix_rank(b.reshape((-1,) + b.shape[-2:])).reshape(b.shape[:-2])
            loc = tuple(int(k) for k in np.argwhere(rank < b.shape[-1])[0])
        raise SingularTensor("tensor is exactly singular", location=loc) from None
    with np.errstate(divide="ignore", invalid="ignore"):
        rcond = 1.0 / (norm2(b) * norm2(inv))
    bad = ~(rcond > singular_tol * 1e-2)
    if np.any(bad):
        loc = tuple(int(k) for k in np.argwhere(np.atleast_1d(bad))[0]) if b.ndim > 2 else None
        raise SingularTensor("tensor is not invertible", location=loc)
    return inv


def cauchy_green(g: np.ndarray, singular_tol: float = SINGULAR_TOL) -> np.ndarray:
    """Cauchy-Green tensor ``C = (g^T g)^{-1}``.

    Computed as ``g^{-1} g^{-T}``, whose conditioning is that of ``g`` rather
    than its square.

    Raises
    ------
    SingularTensor
        See :func:`inverse`.
    """
    ginv = inverse(np.asarray(g, dtype=float), singular_tol)
    return finger(np.swapaxes(ginv, -1, -2))


@dataclass(frozen=True)
class Invariants:
    """Strain invariants of a Finger tensor.

    ``i2`` is always the trace of the inverse. The quadratic form
    ``((tr B)^2 - tr B^2) / 2`` coincides with it only when ``det B = 1``
    in three dimensions and is not computed.
    """

    i1: np.ndarray
    i2: np.ndarray
    det_b: np.ndarray


def invariants(b: np.ndarray, singular_tol: float = SINGULAR_TOL) -> Invariants:
    """Return ``(tr B, tr B^{-1}, det B)`` for a (stack of) SPD tensor(s)."""
    b = np.asarray(b, dtype=float)
    binv = inverse(b, singular_tol)
    return Invariants(
        i1=np.trace(b, axis1=-2, axis2=-1),
        i2=np.trace(binv, axis1=-2, axis2=-1),
        det_b=np.linalg.det(b),
    )


def tensor_exp(a: np.ndarray, t: float = 1.0) -> np.ndarray:
    """Matrix exponential ``exp(t a)``, batched over leading axes."""
    a = np.asarray(a, dtype=float)
    return scipy.linalg.expm(t * a)


def norm2(a: np.ndarray) -> np.ndarray:
    """Frobenius norm over the last two axes."""
    return np.sqrt(np.sum(np.square(a), axis=(-2, -1)))


def norm4(h: np.ndarray) -> np.ndarray:
    """Euclidean norm of a fourth-order tensor over its last four axes."""
    return np.sqrt(np.sum(np.square(h), axis=(-4, -3, -2, -1)))


def outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Tensor product ``(a ⊗ b)_{ijkl} = a_ij b_kl``."""
    return np.einsum("...ij,...kl->...ijkl", a, b)


def random_unimodular(
    rng: np.random.Generator,
    n: int,
    d: int,
    norms: np.ndarray | None = None,
) -> np.ndarray:
    """Draw ``n`` matrices with unit determinant.

    Each sample is ``Q1 diag(sigma) Q2`` with Haar-random rotations and
    log-singular values summing to zero. When ``norms`` is given the singular
    values are scaled so that ``|g| = norms[k]``; targets below ``sqrt(d)``
    are unreachable on the unit-determinant set and are clipped to it.
    """
    q1 = _random_rotations(rng, n, d)
    q2 = _random_rotations(rng, n, d)
    ell = rng.normal(size=(n, d))
    ell -= ell.mean(axis=1, keepdims=True)
    ell /= np.linalg.norm(ell, axis=1, keepdims=True) + 1e-300
    if norms is None:
        scale = rng.exponential(1.0, size=n)
    else:
        target = np.maximum(np.asarray(norms, dtype=float), np.sqrt(d))
        scale = _solve_scale(ell, target)
    sigma = np.exp(scale[:, None] * ell)
    return q1 @ (sigma[:, :, None] * q2)


def _solve_scale(ell: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Find ``t >= 0`` with ``sum exp(2 t ell) = target^2`` per row by bisection."""
    lo = np.zeros(len(ell))
    hi = np.full(len(ell), 1.0)
    goal = target**2

    def f(t):
        return np.exp(2.0 * t[:, None] * ell).sum(axis=1) - goal

    while np.any(f(hi) < 0):
        hi = np.where(f(hi) < 0, 2.0 * hi, hi)
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        neg = f(mid) < 0
        lo = np.where(neg, mid, lo)
        hi = np.where(neg, hi, mid)
    return 0.5 * (lo + hi)


def _random_rotations(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    z = rng.normal(size=(n, d, d))
    q, r = np.linalg.qr(z)
    q = q * np.sign(np.diagonal(r, axis1=-2, axis2=-1))[:, None, :]
    det = np.linalg.det(q)
    q[:, :, 0] *= det[:, None]
    return q
