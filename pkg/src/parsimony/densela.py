"""Small dense real linear algebra kernel.

Matrices are plain 2-D ``float64`` numpy arrays. Only elementwise and
row/column arithmetic from numpy is used; the factorizations themselves
(partial-pivoting LU, cyclic Jacobi) live here so every tolerance the
completion code depends on is explicit.

Indices are 0-based throughout.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

__all__ = [
    "LinAlgError",
    "DimensionError",
    "SingularMatrixError",
    "RankError",
    "NotPSDError",
    "LuFactorization",
    "SymEig",
    "PolarFactors",
    "as_matrix",
    "lu_factor",
    "lu_solve",
    "det",
    "inverse",
    "solve",
    "sym_eig",
    "sqrt_psd",
    "polar",
    "pinv_frr",
    "is_positive_definite",
]

PIVOT_RTOL = 1e-14
PSD_CLAMP_RTOL = 1e-12
RANK_RTOL = 1e-14
JACOBI_RTOL = 1e-13
JACOBI_MAX_SWEEPS = 100


class LinAlgError(ValueError):
    pass


class DimensionError(LinAlgError):
    pass


class SingularMatrixError(LinAlgError):
    def __init__(self, message: str, pivot_index: int | None = None):
        super().__init__(message)
        self.pivot_index = pivot_index


class RankError(LinAlgError):
    def __init__(self, message: str, smallest_eigenvalue: float | None = None):
        super().__init__(message)
        self.smallest_eigenvalue = smallest_eigenvalue


class NotPSDError(LinAlgError):
    pass


@dataclass(frozen=True)
class LuFactorization:
    """Row-pivoted LU factors ``A[perm] = L @ U`` in combined storage.

    ``lu`` holds the unit lower factor below the diagonal and ``U`` on and
    above it. When ``singular`` is set, ``singular_index`` is the first
    elimination step whose pivot fell under the threshold; the factors past
    that step are not meaningful.
    """

    lu: np.ndarray
    perm: np.ndarray
    sign: int
    singular: bool = False
    singular_index: int | None = None

    @property
    def L(self) -> np.ndarray:
        return np.tril(self.lu, -1) + np.eye(self.lu.shape[0])

    @property
    def U(self) -> np.ndarray:
        return np.triu(self.lu)


class SymEig(NamedTuple):
    values: np.ndarray
    vectors: np.ndarray


class PolarFactors(NamedTuple):
    P: np.ndarray
    U: np.ndarray


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Return ``a`` as a fresh finite 2-D float array."""
    m = np.array(a, dtype=float)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2 or m.shape[0] == 0 or m.shape[1] == 0:
        raise DimensionError(f"{name} must be a non-empty 2-D array, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    return m


def _require_square(a: np.ndarray, what: str) -> None:
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"{what} needs a square matrix, got {a.shape[0]}x{a.shape[1]}")


def lu_factor(a) -> LuFactorization:
    """Partial-pivoting LU factorization.

    A pivot is declared negligible when its magnitude drops below
    ``1e-14 * max row norm`` of the input; the factorization is then
    flagged singular instead of raising, so callers can decide.
    """
    lu = as_matrix(a)
    _require_square(lu, "lu_factor")
    n = lu.shape[0]
    perm = np.arange(n)
    sign = 1
    threshold = PIVOT_RTOL * np.max(np.sqrt(np.sum(lu * lu, axis=1)))
    for k in range(n):
        p = k + int(np.argmax(np.abs(lu[k:, k])))
        if p != k:
            lu[[k, p]] = lu[[p, k]]
            perm[[k, p]] = perm[[p, k]]
            sign = -sign
        pivot = lu[k, k]
        if abs(pivot) <= threshold:
            return LuFactorization(lu, perm, sign, singular=True, singular_index=k)
        if k + 1 < n:
            lu[k + 1 :, k] /= pivot
            lu[k + 1 :, k + 1 :] -= np.outer(lu[k + 1 :, k], lu[k, k + 1 :])
    return LuFactorization(lu, perm, sign)


def lu_solve(fact: LuFactorization, b: np.ndarray) -> np.ndarray:
    if fact.singular:
        raise SingularMatrixError(
            f"matrix is singular (negligible pivot at step {fact.singular_index})",
            fact.singular_index,
        )
    lu = fact.lu
    n = lu.shape[0]
    vector = b.ndim == 1
    y = np.array(b, dtype=float)[fact.perm]
    if vector:
        y = y[:, None]
    for k in range(1, n):
        y[k] -= lu[k, :k] @ y[:k]
    for k in range(n - 1, -1, -1):
        y[k] = (y[k] - lu[k, k + 1 :] @ y[k + 1 :]) / lu[k, k]
    return y[:, 0] if vector else y


def det(a) -> float:
    """Determinant from the LU pivots; exactly 0.0 for a flagged-singular matrix."""
    fact = lu_factor(a)
    if fact.singular:
        return 0.0
    return float(fact.sign * np.prod(np.diag(fact.lu)))


def inverse(a) -> np.ndarray:
    fact = lu_factor(a)
    return lu_solve(fact, np.eye(fact.lu.shape[0]))


def solve(a, b) -> np.ndarray:
    """Solve ``A X = B`` for square nonsingular ``A``. ``B`` may be a vector."""
    a = as_matrix(a, "A")
    _require_square(a, "solve")
    b = np.asarray(b, dtype=float)
    if b.shape[0] != a.shape[0]:
        raise DimensionError(f"right-hand side has {b.shape[0]} rows, expected {a.shape[0]}")
    return lu_solve(lu_factor(a), b)


def _off_norm(a: np.ndarray) -> float:
    off = a - np.diag(np.diag(a))
    return float(np.sqrt(np.sum(off * off)))


def sym_eig(s) -> SymEig:
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    The input is symmetrized as ``(S + S.T) / 2``. Sweeps continue until the
    off-diagonal Frobenius mass is below ``1e-13`` of its initial value (or
    at the rounding floor of the matrix). Eigenvalues are returned in
    ascending order with matching orthonormal eigenvector columns.
    """
    a = as_matrix(s)
    _require_square(a, "sym_eig")
    a = 0.5 * (a + a.T)
    n = a.shape[0]
    v = np.eye(n)
    off0 = _off_norm(a)
    floor = np.finfo(float).eps * np.sqrt(np.sum(a * a))
    target = max(JACOBI_RTOL * off0, floor * 1e-3)
    for _ in range(JACOBI_MAX_SWEEPS):
        if _off_norm(a) <= target:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                diff = a[q, q] - a[p, p]
                if abs(apq) < 1e-150 * abs(diff):
                    t = apq / diff
                else:
                    theta = diff / (2.0 * apq)
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                sn = t * c
                ap = a[:, p].copy()
                aq = a[:, q]
                a[:, p] = c * ap - sn * aq
                a[:, q] = sn * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :]
                a[p, :] = c * ap - sn * aq
                a[q, :] = sn * ap + c * aq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q]
                v[:, p] = c * vp - sn * vq
                v[:, q] = sn * vp + c * vq
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return SymEig(w[order], v[:, order])


def sqrt_psd(s) -> np.ndarray:
    """Symmetric square root of a positive semidefinite matrix."""
    w, v = sym_eig(s)
    scale = max(float(np.max(np.abs(w))), np.finfo(float).tiny)
    if w[0] < -PSD_CLAMP_RTOL * scale:
        raise NotPSDError(f"matrix is not positive semidefinite (eigenvalue {w[0]:.3e})")
    r = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
    return 0.5 * (r + r.T)


def _gram_eig(sigma: np.ndarray) -> SymEig:
    if sigma.shape[0] > sigma.shape[1]:
        raise DimensionError(
            f"expected rows <= cols, got {sigma.shape[0]}x{sigma.shape[1]}; transpose first"
        )
    w, v = sym_eig(sigma @ sigma.T)
    if w[0] <= RANK_RTOL * max(w[-1], np.finfo(float).tiny):
        raise RankError(
            f"matrix is not full row rank (smallest eigenvalue of Sigma Sigma^T {w[0]:.3e})",
            float(w[0]),
        )
    return SymEig(w, v)


def polar(sigma) -> PolarFactors:
    """Polar factors ``Sigma = P U`` of a full-row-rank matrix.

    ``P = (Sigma Sigma^T)^(1/2)`` is symmetric positive definite and ``U``
    has orthonormal rows.
    """
    sigma = as_matrix(sigma, "Sigma")
    w, v = _gram_eig(sigma)
    root = np.sqrt(w)
    p = (v * root) @ v.T
    p_inv = (v / root) @ v.T
    return PolarFactors(0.5 * (p + p.T), p_inv @ sigma)


def pinv_frr(sigma) -> np.ndarray:
    """Moore-Penrose pseudoinverse ``Sigma^T (Sigma Sigma^T)^-1`` of a full-row-rank matrix.

    A square ``Sigma`` goes through its own LU factorization (the formula
    reduces to the inverse); a wide one gets one step of residual
    refinement after the normal-equations solve.
    """
    sigma = as_matrix(sigma, "Sigma")
    if sigma.shape[0] > sigma.shape[1]:
        raise DimensionError(
            f"expected rows <= cols, got {sigma.shape[0]}x{sigma.shape[1]}; transpose first"
        )
    if sigma.shape[0] == sigma.shape[1]:
        fact = lu_factor(sigma)
        if fact.singular:
            raise RankError("matrix is not full row rank")
        return lu_solve(fact, np.eye(sigma.shape[0]))
    fact = lu_factor(sigma @ sigma.T)
    if fact.singular:
        raise RankError("matrix is not full row rank")
    g = lu_solve(fact, sigma).T
    # forming Sigma Sigma^T squares the condition number; one refinement
    # step on the right-inverse residual wins most of that back
    return g + g @ (np.eye(sigma.shape[0]) - sigma @ g)


def is_positive_definite(s, rtol: float = 0.0) -> bool:
    """Cholesky-style test: every pivot of the symmetric part exceeds ``rtol * max|diag|``."""
    a = as_matrix(s)
    _require_square(a, "is_positive_definite")
    a = 0.5 * (a + a.T)
    n = a.shape[0]
    bound = rtol * float(np.max(np.abs(np.diag(a))))
    for k in range(n):
        d = a[k, k]
        if not d > bound:
            return False
        if k + 1 < n:
            col = a[k + 1 :, k] / d
            a[k + 1 :, k + 1 :] -= np.outer(col, a[k, k + 1 :])
    return True
