"""Partial matrices with tied unknowns and the log-determinant calculus on them.

A :class:`Pattern` fixes some entries of an ``rows x cols`` matrix and groups
the remaining positions into *classes*; each class is one scalar unknown
written at every position it contains. Positions are 0-based ``(i, j)``
pairs here; 1-based indices only exist in the file format.

For a square completion ``Sigma(x)`` the objective is ``log|det Sigma(x)|``
and the derivative with respect to a class is the sum over its positions
``(i, j)`` of ``inv(Sigma)[j, i]``. For a wide full-row-rank completion the
objective is ``log det (Sigma Sigma^T)^(1/2)`` and the same formula holds
with the Moore-Penrose pseudoinverse in place of the inverse.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from . import densela
from .densela import DimensionError

Position = tuple[int, int]

ZERO_RTOL = 1e-9
RECT_HESSIAN_STEP = 1e-6


class PatternError(ValueError):
    pass


class EvaluationError(ValueError):
    """The completion at the requested point is singular or rank deficient."""


def parse_value(v) -> float:
    """Parse a number given as a float/int or a decimal or ``"p/q"`` string."""
    if isinstance(v, bool):
        raise ValueError(f"not a number: {v!r}")
    if isinstance(v, (int, float)):
        out = float(v)
    elif isinstance(v, str):
        s = v.strip()
        try:
            out = float(Fraction(s)) if "/" in s else float(s)
        except (ValueError, ZeroDivisionError) as exc:
            raise ValueError(f"not a number: {v!r}") from exc
    else:
        raise ValueError(f"not a number: {v!r}")
    if not np.isfinite(out):
        raise ValueError(f"not a finite number: {v!r}")
    return out


@dataclass(frozen=True)
class Pattern:
    """Specified entries plus an ordered list of unknown classes.

    When ``classes`` is omitted every unspecified position becomes its own
    singleton class, in row-major order.
    """

    rows: int
    cols: int
    specified: Mapping[Position, float]
    classes: tuple[tuple[Position, ...], ...] | None = None

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise PatternError(f"dimensions must be positive, got {self.rows}x{self.cols}")
        spec = {}
        for pos, v in dict(self.specified).items():
            pos = self._check_pos(pos)
            spec[pos] = float(v)
            if not np.isfinite(spec[pos]):
                raise PatternError(f"specified value at {pos} is not finite")
        object.__setattr__(self, "specified", spec)

        if self.classes is None:
            classes = tuple(
                ((i, j),)
                for i in range(self.rows)
                for j in range(self.cols)
                if (i, j) not in spec
            )
        else:
            classes = tuple(tuple(self._check_pos(p) for p in c) for c in self.classes)
        seen: set[Position] = set()
        for c, members in enumerate(classes):
            if not members:
                raise PatternError(f"class {c} is empty")
            for p in members:
                if p in spec:
                    raise PatternError(f"position {p} is both specified and in class {c}")
                if p in seen:
                    raise PatternError(f"position {p} occurs twice among the classes")
                seen.add(p)
        missing = self.rows * self.cols - len(spec) - len(seen)
        if missing:
            raise PatternError(f"{missing} position(s) are neither specified nor in a class")
        object.__setattr__(self, "classes", classes)

    def _check_pos(self, pos) -> Position:
        i, j = (int(t) for t in pos)
        if not (0 <= i < self.rows and 0 <= j < self.cols):
            raise PatternError(f"position {(i, j)} outside a {self.rows}x{self.cols} matrix")
        return (i, j)

    @property
    def k(self) -> int:
        return len(self.classes)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def untied(self) -> bool:
        return all(len(c) == 1 for c in self.classes)

    @property
    def unknown_positions(self) -> list[Position]:
        return [p for c in self.classes for p in c]

    @cached_property
    def base(self) -> np.ndarray:
        m = np.zeros((self.rows, self.cols))
        for (i, j), v in self.specified.items():
            m[i, j] = v
        return m

    @cached_property
    def index_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Row, column and class index of every unknown position, class-major."""
        pos = self.unknown_positions
        owner = [c for c, members in enumerate(self.classes) for _ in members]
        return (
            np.array([p[0] for p in pos], dtype=int),
            np.array([p[1] for p in pos], dtype=int),
            np.array(owner, dtype=int),
        )

    @cached_property
    def class_indicator(self) -> np.ndarray:
        _, _, owner = self.index_arrays
        ind = np.zeros((len(owner), self.k))
        ind[np.arange(len(owner)), owner] = 1.0
        return ind

    def transpose(self) -> "Pattern":
        return Pattern(
            self.cols,
            self.rows,
            {(j, i): v for (i, j), v in self.specified.items()},
            tuple(tuple((j, i) for (i, j) in c) for c in self.classes),
        )

    def data_scale(self) -> float:
        return max((abs(v) for v in self.specified.values()), default=0.0)


@dataclass(frozen=True)
class PartialMatrix:
    """A pattern in solver orientation (``rows <= cols``).

    ``transposed`` records that the user's matrix was tall and has been
    transposed; results must be transposed back before reporting.
    """

    pattern: Pattern
    transposed: bool = False

    def __post_init__(self):
        if self.pattern.rows > self.pattern.cols:
            raise DimensionError(
                f"{self.pattern.rows}x{self.pattern.cols} pattern is tall; use normalize_rect"
            )

    @classmethod
    def from_pattern(cls, pattern: Pattern) -> "PartialMatrix":
        return normalize_rect(pattern)[0]

    @property
    def mode(self) -> str:
        return "square" if self.pattern.rows == self.pattern.cols else "rectangular"

    @property
    def k(self) -> int:
        return self.pattern.k

    @property
    def shape(self) -> tuple[int, int]:
        return self.pattern.shape


def normalize_rect(pattern: Pattern) -> tuple[PartialMatrix, bool]:
    """Bring a pattern to ``rows <= cols``, transposing a tall one.

    Class order is preserved, so an unknown vector means the same thing in
    both orientations.
    """
    if pattern.rows > pattern.cols:
        return PartialMatrix(pattern.transpose(), transposed=True), True
    return PartialMatrix(pattern), False


def _as_x(pm: PartialMatrix, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != pm.k:
        raise DimensionError(f"expected {pm.k} unknowns, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise ValueError("unknown vector has non-finite entries")
    return x


def assemble(pm: PartialMatrix, x) -> np.ndarray:
    x = _as_x(pm, x)
    rows, cols, owner = pm.pattern.index_arrays
    sigma = pm.pattern.base.copy()
    sigma[rows, cols] = x[owner]
    return sigma


class Evaluation(NamedTuple):
    """Everything the calculus needs at one point.

    ``inverse`` is the inverse (square) or Moore-Penrose pseudoinverse
    (rectangular); ``gram_det`` is ``det Sigma`` for square matrices and
    ``det(Sigma Sigma^T)`` otherwise.
    """

    x: np.ndarray
    sigma: np.ndarray
    inverse: np.ndarray
    objective: float
    gram_det: float


def evaluate(pm: PartialMatrix, x) -> Evaluation:
    x = _as_x(pm, x)
    sigma = assemble(pm, x)
    if pm.mode == "square":
        fact = densela.lu_factor(sigma)
        if fact.singular:
            raise EvaluationError(f"completion is singular (pivot {fact.singular_index})")
        pivots = np.diag(fact.lu)
        inv = densela.lu_solve(fact, np.eye(sigma.shape[0]))
        obj = float(np.sum(np.log(np.abs(pivots))))
        d = float(fact.sign * np.prod(pivots))
    else:
        gram = sigma @ sigma.T
        fact = densela.lu_factor(gram)
        if fact.singular:
            raise EvaluationError("completion is not full row rank")
        pivots = np.diag(fact.lu)
        d = float(fact.sign * np.prod(pivots))
        if d <= 0.0:
            raise EvaluationError("completion is not full row rank")
        inv = densela.lu_solve(fact, sigma).T
        obj = 0.5 * float(np.sum(np.log(np.abs(pivots))))
    return Evaluation(x, sigma, inv, obj, d)


def objective(pm: PartialMatrix, x) -> float:
    return evaluate(pm, x).objective


def gradient_from(pm: PartialMatrix, inv: np.ndarray) -> np.ndarray:
    rows, cols, owner = pm.pattern.index_arrays
    return np.bincount(owner, weights=inv[cols, rows], minlength=pm.k)


def gradient(pm: PartialMatrix, x) -> np.ndarray:
    """Derivative of the objective with respect to each class."""
    return gradient_from(pm, evaluate(pm, x).inverse)


def zero_threshold(inv: np.ndarray) -> float:
    return ZERO_RTOL * (1.0 + float(np.max(np.abs(inv))))


def count_zeros(inv: np.ndarray) -> int:
    return int(np.count_nonzero(np.abs(inv) < zero_threshold(inv)))


class ResidualReport(NamedTuple):
    entries: dict[Position, float]
    zero_count: int
    threshold: float

    @property
    def max_abs(self) -> float:
        return max((abs(v) for v in self.entries.values()), default=0.0)


def residual_report_from(pm: PartialMatrix, inv: np.ndarray) -> ResidualReport:
    entries = {(i, j): float(inv[j, i]) for (i, j) in pm.pattern.unknown_positions}
    return ResidualReport(entries, count_zeros(inv), zero_threshold(inv))


def residual_report(pm: PartialMatrix, x) -> ResidualReport:
    """(Pseudo)inverse entry at the transposed position of every unknown.

    Keys are the unknown positions ``(i, j)``; values are ``inv[j, i]``.
    ``zero_count`` counts entries of the whole (pseudo)inverse under the
    vanishing threshold.
    """
    return residual_report_from(pm, evaluate(pm, x).inverse)


def newton_matrix_from(pm: PartialMatrix, ev: Evaluation) -> np.ndarray:
    if pm.mode == "square":
        rows, cols, _ = pm.pattern.index_arrays
        ind = pm.pattern.class_indicator
        a = ev.inverse[np.ix_(cols, rows)]
        return -(ind.T @ (a * a.T) @ ind)
    return _fd_gradient_jacobian(pm, ev.x)


def newton_matrix(pm: PartialMatrix, x) -> np.ndarray:
    """Second derivative of the objective in class coordinates.

    Square patterns use the closed form
    ``H[c, c'] = -sum inv[j, l] * inv[m, i]`` over ``(i, j)`` in ``c`` and
    ``(l, m)`` in ``c'``. Rectangular patterns difference the analytic
    gradient with step ``1e-6 * (1 + |x_c|)`` and symmetrize.
    """
    return newton_matrix_from(pm, evaluate(pm, x))


def _fd_gradient_jacobian(pm: PartialMatrix, x: np.ndarray) -> np.ndarray:
    k = pm.k
    h = np.empty((k, k))
    for c in range(k):
        step = RECT_HESSIAN_STEP * (1.0 + abs(x[c]))
        xp = x.copy()
        xm = x.copy()
        xp[c] += step
        xm[c] -= step
        h[:, c] = (gradient(pm, xp) - gradient(pm, xm)) / (2.0 * step)
    return 0.5 * (h + h.T)


def structural_precheck(pm: PartialMatrix) -> list[str]:
    """Warnings for square patterns that cannot have a critical point.

    An empty list means nothing was detected. Two situations are flagged:
    all unknowns in one row or one column (``det`` is then affine in ``x``
    and its log has no stationary point), and a singleton class whose
    cofactor involves no unknowns and is nonzero (its gradient component
    never vanishes).
    """
    if pm.mode != "square" or pm.k == 0:
        return []
    pat = pm.pattern
    warnings = []
    positions = pat.unknown_positions
    if len({i for i, _ in positions}) == 1:
        warnings.append(
            f"all unknowns lie in row {positions[0][0] + 1}; the determinant is affine "
            "in the unknowns and no critical point exists"
        )
    elif len({j for _, j in positions}) == 1:
        warnings.append(
            f"all unknowns lie in column {positions[0][1] + 1}; the determinant is affine "
            "in the unknowns and no critical point exists"
        )
    n = pat.rows
    for c, members in enumerate(pat.classes):
        if len(members) != 1 or n == 1:
            continue
        i, j = members[0]
        if any(p != i and q != j for p, q in positions):
            continue
        minor = np.delete(np.delete(pat.base, i, axis=0), j, axis=1)
        cof = densela.det(minor)
        if cof != 0.0:
            warnings.append(
                f"unknown at ({i + 1},{j + 1}) has constant nonzero cofactor {cof:.6g}; "
                "its gradient component cannot vanish"
            )
    return warnings


def build_pattern(
    matrix: Sequence[Sequence[float | None]],
    classes: Iterable[Iterable[Position]] | None = None,
) -> Pattern:
    """Pattern from a nested list with ``None`` marking unknown entries."""
    rows = len(matrix)
    cols = len(matrix[0])
    spec = {
        (i, j): parse_value(v)
        for i, row in enumerate(matrix)
        for j, v in enumerate(row)
        if v is not None
    }
    cls = None if classes is None else tuple(tuple(tuple(p) for p in c) for c in classes)
    return Pattern(rows, cols, spec, cls)
