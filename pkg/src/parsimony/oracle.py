"""Brute-force cross-checks that share no code path with the analytic calculus.

* :func:`fd_gradient` differences the objective.
* :func:`det_poly_along_class` recovers ``det Sigma(x)`` as a polynomial in
  one class by interpolation, and :func:`real_roots` finds the stationary
  points of that polynomial. For a single-class pattern this enumerates
  every critical point.
* :func:`mp_axiom_check` measures how far a candidate pseudoinverse is from
  satisfying the Moore-Penrose identities.
"""
from __future__ import annotations

import numpy as np

from . import densela
from .densela import DimensionError
from .partialmat import EvaluationError, PartialMatrix, assemble, objective

__all__ = [
    "ProbeError",
    "PolyCoeffs",
    "fd_gradient",
    "det_poly_along_class",
    "real_roots",
    "mp_axiom_check",
]

TRIM_RTOL = 1e-12
REAL_RTOL = 1e-8


class ProbeError(ValueError):
    def __init__(self, coordinate: int, message: str):
        super().__init__(f"probe on coordinate {coordinate} failed: {message}")
        self.coordinate = coordinate


def fd_gradient(pm: PartialMatrix, x, h: float = 1e-6) -> np.ndarray:
    """Central differences of the objective, step ``h * (1 + |x_c|)`` per coordinate."""
    x = np.asarray(x, dtype=float)
    out = np.empty(pm.k)
    for c in range(pm.k):
        step = h * (1.0 + abs(x[c]))
        xp = x.copy()
        xm = x.copy()
        xp[c] += step
        xm[c] -= step
        try:
            out[c] = (objective(pm, xp) - objective(pm, xm)) / (2.0 * step)
        except EvaluationError as exc:
            raise ProbeError(c, str(exc)) from None
    return out


class PolyCoeffs(np.ndarray):
    """Ascending-degree coefficients ``c0, c1, ..., cd`` of a real polynomial."""

    def __new__(cls, coeffs):
        return np.asarray(coeffs, dtype=float).view(cls)

    def trimmed(self) -> "PolyCoeffs":
        c = np.asarray(self)
        scale = float(np.max(np.abs(c), initial=0.0))
        keep = len(c)
        while keep > 1 and abs(c[keep - 1]) <= TRIM_RTOL * scale:
            keep -= 1
        return PolyCoeffs(c[:keep])

    @property
    def degree(self) -> int:
        return len(self.trimmed()) - 1

    def __call__(self, t):
        return np.polynomial.polynomial.polyval(t, np.asarray(self))

    def derivative(self) -> "PolyCoeffs":
        c = np.asarray(self)
        if len(c) <= 1:
            return PolyCoeffs([0.0])
        return PolyCoeffs(c[1:] * np.arange(1, len(c)))


def det_poly_along_class(pm: PartialMatrix, x, c: int) -> PolyCoeffs:
    """``det Sigma(x)`` as a polynomial in ``x_c`` with the other unknowns frozen.

    The degree is at most the class size ``s``; the coefficients come from
    determinants at the nodes ``0, 1, ..., s`` and a Vandermonde solve.
    """
    if pm.mode != "square":
        raise DimensionError("det_poly_along_class needs a square pattern")
    x = np.asarray(x, dtype=float).copy()
    size = len(pm.pattern.classes[c])
    nodes = np.arange(size + 1, dtype=float)
    values = np.empty(size + 1)
    for n, t in enumerate(nodes):
        x[c] = t
        values[n] = densela.det(assemble(pm, x))
    vander = nodes[:, None] ** np.arange(size + 1)[None, :]
    return PolyCoeffs(densela.solve(vander, values))


def real_roots(p) -> np.ndarray:
    """Real roots of a polynomial, ascending.

    Degrees 1 and 2 use closed forms; higher degrees take the eigenvalues of
    the companion matrix. Roots whose imaginary part is below
    ``1e-8 * (1 + |root|)`` count as real and are polished by Newton steps.
    """
    c = np.asarray(PolyCoeffs(p).trimmed())
    deg = len(c) - 1
    if deg < 1:
        raise ValueError("polynomial has degree 0; no roots to find")
    if deg == 1:
        return np.array([-c[0] / c[1]])
    if deg == 2:
        a, b, q = c[2], c[1], c[0]
        disc = b * b - 4.0 * a * q
        if disc < -REAL_RTOL * (b * b + abs(4.0 * a * q)):
            return np.empty(0)
        root = np.sqrt(max(disc, 0.0))
        s = -0.5 * (b + np.copysign(root, b))
        if s == 0.0:
            return np.array([0.0, 0.0])
        return np.sort(np.array([s / a, q / s]))
    monic = c[:-1] / c[-1]
    companion = np.zeros((deg, deg))
    companion[1:, :-1] = np.eye(deg - 1)
    companion[:, -1] = -monic
    eig = np.linalg.eigvals(companion)
    real = np.sort(eig[np.abs(eig.imag) <= REAL_RTOL * (1.0 + np.abs(eig))].real)
    dc = np.asarray(PolyCoeffs(c).derivative())
    polyval = np.polynomial.polynomial.polyval
    for _ in range(3):
        slope = polyval(real, dc)
        ok = slope != 0
        real[ok] -= polyval(real[ok], c) / slope[ok]
    return np.sort(real)


def mp_axiom_check(sigma, sigma_pinv) -> float:
    """Largest violation of the Moore-Penrose identities plus ``Sigma Sigma# = I``."""
    a = np.asarray(sigma, dtype=float)
    g = np.asarray(sigma_pinv, dtype=float)
    if g.shape != a.shape[::-1]:
        raise DimensionError(f"pseudoinverse shape {g.shape} does not match {a.shape[::-1]}")
    ag = a @ g
    ga = g @ a
    return float(
        max(
            np.max(np.abs(ag @ a - a)),
            np.max(np.abs(ga @ g - g)),
            np.max(np.abs(ag.T - ag)),
            np.max(np.abs(ga.T - ga)),
            np.max(np.abs(ag - np.eye(a.shape[0]))),
        )
    )
