"""Finding completions: damped Newton, multistart, the maximum-entropy path and the dual check."""
from __future__ import annotations

import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import densela
from .densela import DimensionError, LinAlgError
from .partialmat import (
    EvaluationError,
    Evaluation,
    PartialMatrix,
    Position,
    ResidualReport,
    assemble,
    count_zeros,
    evaluate,
    gradient_from,
    newton_matrix_from,
    residual_report_from,
    zero_threshold,
)

__all__ = [
    "SolverConfig",
    "Flags",
    "Solution",
    "SolutionSet",
    "ConvergenceError",
    "PatternNotSymmetricError",
    "DomainError",
    "DualParameters",
    "AppliedCompletion",
    "inspect_point",
    "newton",
    "multistart",
    "classify",
    "dempster_spd",
    "entropy",
    "dual_solve",
    "apply_completion",
]

FAILURE_REASONS = ("singular-start", "singular-newton-matrix", "max-iters", "step-underflow")

STRUCTURE_RTOL = 1e-8
PD_RTOL = 1e-10
DEMPSTER_MAX_DRAWS = 1000
DUAL_POLISH_STEPS = 3


class ConvergenceError(RuntimeError):
    """A solver gave up. ``reason`` is one of a small fixed set of strings."""

    def __init__(self, reason: str, message: str = "", iterations: int = 0):
        super().__init__(f"{reason}: {message}" if message else reason)
        self.reason = reason
        self.iterations = iterations


class PatternNotSymmetricError(ValueError):
    pass


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    """Tolerances and knobs shared by every solver.

    ``start_range=None`` means ``2 * (1 + max|specified value|)``.
    ``workers`` only changes how multistart is scheduled, never its result.
    """

    grad_tol: float = 1e-10
    dedup_tol: float = 1e-6
    max_iters: int = 100
    starts: int = 200
    start_range: float | None = None
    seed: int = 0
    singular_guard: float = 1e-12
    contraction: float = 0.5
    min_step: float = 1e-12
    workers: int = 1

    def __post_init__(self):
        for name in ("grad_tol", "dedup_tol", "singular_guard", "min_step"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.contraction < 1:
            raise ValueError("contraction must lie in (0, 1)")
        if self.starts < 1 or self.max_iters < 1:
            raise ValueError("starts and max_iters must be at least 1")
        if self.start_range is not None and not self.start_range > 0:
            raise ValueError("start_range must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    def range_for(self, pm: PartialMatrix) -> float:
        if self.start_range is not None:
            return float(self.start_range)
        return 2.0 * (1.0 + pm.pattern.data_scale())


@dataclass(frozen=True)
class Flags:
    symmetric: bool
    toeplitz: bool
    positive_definite: bool
    zero_count: int


@dataclass(frozen=True)
class Solution:
    x: np.ndarray
    sigma: np.ndarray
    inverse: np.ndarray
    objective: float
    grad_norm: float
    residuals: ResidualReport
    flags: Flags
    start_index: int | None = None
    iterations: int = 0
    entropy: float | None = None


@dataclass
class SolutionSet:
    solutions: list[Solution]
    starts: int = 0
    converged: int = 0
    failures: Counter = field(default_factory=Counter)

    def __len__(self):
        return len(self.solutions)

    def __iter__(self):
        return iter(self.solutions)

    def __getitem__(self, i):
        return self.solutions[i]


def _well_posed(pm: PartialMatrix, ev: Evaluation, guard: float) -> bool:
    """Hadamard-ratio test: ``|det|`` relative to the product of row norms.

    In rectangular mode the same ratio is taken on ``Sigma Sigma^T``.
    """
    norms2 = np.sum(ev.sigma * ev.sigma, axis=1)
    if pm.mode == "square":
        bound = float(np.prod(np.sqrt(norms2)))
    else:
        bound = float(np.prod(norms2))
    return bound > 0 and abs(ev.gram_det) > guard * bound


def _try_evaluate(pm: PartialMatrix, x, guard: float) -> Evaluation | None:
    try:
        ev = evaluate(pm, x)
    except EvaluationError:
        return None
    return ev if _well_posed(pm, ev, guard) else None


def classify(sigma, inv) -> Flags:
    sigma = np.asarray(sigma, dtype=float)
    scale = float(np.max(np.abs(sigma))) or 1.0
    tol = STRUCTURE_RTOL * scale
    square = sigma.shape[0] == sigma.shape[1]
    symmetric = square and float(np.max(np.abs(sigma - sigma.T))) < tol
    toeplitz = all(
        np.ptp(np.diagonal(sigma, offset)) < tol
        for offset in range(-sigma.shape[0] + 1, sigma.shape[1])
    )
    pd = False
    if symmetric:
        w = densela.sym_eig(sigma).values
        pd = bool(w[0] > PD_RTOL * scale)
    return Flags(bool(symmetric), bool(toeplitz), pd, count_zeros(np.asarray(inv, dtype=float)))


def _stationary(ev: Evaluation, g: np.ndarray, tol: float) -> bool:
    """Gradient small both absolutely and relative to the size of the completion.

    The gradient scales like ``1 / Sigma``, so an absolute test alone is met
    by runaway iterates whose entries grow without bound.
    """
    return float(np.max(np.abs(g))) * max(1.0, float(np.max(np.abs(ev.sigma)))) < tol


def _make_solution(pm, ev, start_index, iterations, entropy_value=None) -> Solution:
    g = gradient_from(pm, ev.inverse)
    residuals = residual_report_from(pm, ev.inverse)
    if pm.pattern.untied and residuals.max_abs >= zero_threshold(ev.inverse):
        raise ConvergenceError("residual-check", "transposed entries do not vanish", iterations)
    return Solution(
        x=ev.x.copy(),
        sigma=ev.sigma,
        inverse=ev.inverse,
        objective=ev.objective,
        grad_norm=float(np.max(np.abs(g), initial=0.0)),
        residuals=residuals,
        flags=classify(ev.sigma, ev.inverse),
        start_index=start_index,
        iterations=iterations,
        entropy=entropy_value,
    )


def inspect_point(pm: PartialMatrix, x) -> Solution:
    """Package an arbitrary point as a :class:`Solution` without requiring stationarity."""
    ev = evaluate(pm, x)
    g = gradient_from(pm, ev.inverse)
    return Solution(
        x=ev.x.copy(),
        sigma=ev.sigma,
        inverse=ev.inverse,
        objective=ev.objective,
        grad_norm=float(np.max(np.abs(g), initial=0.0)),
        residuals=residual_report_from(pm, ev.inverse),
        flags=classify(ev.sigma, ev.inverse),
    )


def newton(pm: PartialMatrix, x0, cfg: SolverConfig = SolverConfig(), start_index: int | None = None) -> Solution:
    """Damped Newton on the stationarity system of the determinant.

    The iteration works on ``grad det = det * g = 0`` rather than ``g = 0``
    (same roots while ``det != 0``). Its Jacobian is ``det * (H + g g^T)``
    with ``H`` the log-det Newton matrix, so the step solves
    ``(H + g g^T) d = -g``. The step is halved until the candidate stays away
    from singularity and lowers ``det^2 ||g||^2``. On the log-det system
    itself, ``||g||^2`` keeps decreasing as the unknowns run off to infinity
    and Newton follows them there; the polynomial form does not have that
    sink. In rectangular mode ``det`` means ``det(Sigma Sigma^T)^(1/2)``.

    Raises :class:`ConvergenceError` with reason ``singular-start``,
    ``singular-newton-matrix``, ``max-iters`` or ``step-underflow``.
    """
    ev = _try_evaluate(pm, x0, cfg.singular_guard)
    if ev is None:
        raise ConvergenceError("singular-start", "completion at the start point is singular")
    g = gradient_from(pm, ev.inverse)
    merit = _merit(pm, ev, g)
    for it in range(cfg.max_iters + 1):
        if pm.k == 0 or _stationary(ev, g, cfg.grad_tol):
            return _make_solution(pm, ev, start_index, it)
        if it == cfg.max_iters:
            break
        h = newton_matrix_from(pm, ev) + np.outer(g, g)
        try:
            d = densela.solve(h, -g)
        except LinAlgError:
            raise ConvergenceError("singular-newton-matrix", iterations=it) from None
        t = 1.0
        while True:
            cand = _try_evaluate(pm, ev.x + t * d, cfg.singular_guard)
            if cand is not None:
                g_new = gradient_from(pm, cand.inverse)
                merit_new = _merit(pm, cand, g_new)
                if merit_new < merit:
                    break
            t *= cfg.contraction
            if t < cfg.min_step:
                raise ConvergenceError("step-underflow", iterations=it)
        ev, g, merit = cand, g_new, merit_new
    raise ConvergenceError("max-iters", iterations=cfg.max_iters)


def _merit(pm: PartialMatrix, ev: Evaluation, g: np.ndarray) -> float:
    det2 = ev.gram_det**2 if pm.mode == "square" else ev.gram_det
    return det2 * float(g @ g)


def _start_point(cfg: SolverConfig, index: int, k: int, r: float) -> np.ndarray:
    rng = np.random.default_rng([cfg.seed, index])
    return rng.uniform(-r, r, size=k)


def _run_start(args):
    pm, cfg, index, r = args
    try:
        return newton(pm, _start_point(cfg, index, pm.k, r), cfg, start_index=index)
    except ConvergenceError as exc:
        return exc.reason


def _same(a: np.ndarray, b: np.ndarray, tol: float) -> bool:
    scale = max(1.0, float(np.max(np.abs(a))), float(np.max(np.abs(b))))
    return float(np.max(np.abs(a - b))) <= tol * scale


def _order(solutions: list[Solution]) -> list[Solution]:
    return sorted(solutions, key=lambda s: (-s.objective, tuple(s.x)))


def multistart(pm: PartialMatrix, cfg: SolverConfig = SolverConfig()) -> SolutionSet:
    """Newton from ``cfg.starts`` seeded uniform draws, deduplicated in x.

    Start ``i`` draws from a generator seeded with ``(cfg.seed, i)``, and
    results are merged in start order, so the output does not depend on
    ``cfg.workers``. Solutions are sorted by objective (descending), then x.
    """
    if pm.k == 0:
        out = SolutionSet([], starts=1)
        try:
            sol = newton(pm, np.zeros(0), cfg, start_index=0)
        except ConvergenceError as exc:
            out.failures[exc.reason] += 1
        else:
            out.solutions.append(sol)
            out.converged = 1
        return out

    r = cfg.range_for(pm)
    jobs = [(pm, cfg, i, r) for i in range(cfg.starts)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_run_start, jobs, chunksize=max(1, len(jobs) // (4 * cfg.workers))))
    else:
        results = [_run_start(job) for job in jobs]

    out = SolutionSet([], starts=cfg.starts)
    for res in results:
        if isinstance(res, str):
            out.failures[res] += 1
            continue
        out.converged += 1
        if not any(_same(res.x, s.x, cfg.dedup_tol) for s in out.solutions):
            out.solutions.append(res)
    out.solutions = _order(out.solutions)
    return out


def entropy(sigma) -> float:
    """Differential entropy of a zero-mean Gaussian with covariance ``sigma``."""
    sigma = densela.as_matrix(sigma, "Sigma")
    n = sigma.shape[0]
    if sigma.shape[1] != n:
        raise DomainError("entropy needs a square covariance matrix")
    scale = float(np.max(np.abs(sigma))) or 1.0
    if np.max(np.abs(sigma - sigma.T)) >= STRUCTURE_RTOL * scale or not densela.is_positive_definite(sigma):
        raise DomainError("entropy needs a symmetric positive definite matrix")
    fact = densela.lu_factor(sigma)
    if fact.singular:
        raise DomainError("entropy needs a symmetric positive definite matrix")
    logdet = float(np.sum(np.log(np.diag(fact.lu))))
    return 0.5 * logdet + 0.5 * n * (1.0 + math.log(2.0 * math.pi))


def _check_symmetric_pattern(pm: PartialMatrix) -> None:
    pat = pm.pattern
    if pm.mode != "square":
        raise PatternNotSymmetricError("the maximum-entropy completion needs a square pattern")
    tol = 1e-12 * max(1.0, pat.data_scale())
    for (i, j), v in pat.specified.items():
        w = pat.specified.get((j, i))
        if w is None or abs(v - w) > tol:
            raise PatternNotSymmetricError(f"specified entries at ({i + 1},{j + 1}) and ({j + 1},{i + 1}) differ")
    for c, members in enumerate(pat.classes):
        if len(members) == 1 and members[0][0] == members[0][1]:
            continue
        if len(members) == 2 and members[0] == members[1][::-1] and members[0][0] != members[0][1]:
            continue
        raise PatternNotSymmetricError(
            f"class {c + 1} is neither a symmetric pair nor a diagonal entry"
        )


def _logdet_increase(inv: np.ndarray, delta: np.ndarray) -> float:
    """``log det(Sigma + delta) - log det(Sigma)`` without cancellation."""
    e = inv @ delta
    if float(np.max(np.sum(np.abs(e), axis=1))) < 0.1:
        total = 0.0
        power = e
        for m in range(1, 60):
            term = float(np.trace(power)) / m
            total += term if m % 2 else -term
            if abs(term) <= 1e-17 * abs(total):
                break
            power = power @ e
        return total
    fact = densela.lu_factor(np.eye(e.shape[0]) + e)
    if fact.singular:
        return -math.inf
    pivots = np.diag(fact.lu)
    if fact.sign * np.prod(np.sign(pivots)) <= 0:
        return -math.inf
    return float(np.sum(np.log(np.abs(pivots))))


def dempster_spd(pm: PartialMatrix, cfg: SolverConfig = SolverConfig(), history: list | None = None) -> Solution:
    """Maximum-entropy symmetric positive definite completion.

    Newton ascent on ``log det``; a trial step is accepted only if the
    completion stays positive definite and ``log det`` strictly increases.
    Starts from the zero completion when that is positive definite,
    otherwise from up to 1000 seeded random draws. If ``history`` is given,
    the accepted log-det increments are appended to it.
    """
    _check_symmetric_pattern(pm)
    pat = pm.pattern
    x = np.zeros(pm.k)
    if not densela.is_positive_definite(pat.base if pm.k == 0 else assemble(pm, x)):
        rng = np.random.default_rng([cfg.seed, DEMPSTER_MAX_DRAWS])
        r = cfg.range_for(pm)
        for _ in range(DEMPSTER_MAX_DRAWS):
            x = rng.uniform(-r, r, size=pm.k)
            if pm.k > 0 and densela.is_positive_definite(assemble(pm, x)):
                break
        else:
            raise ConvergenceError("no-PD-start-found", f"no positive definite start in {DEMPSTER_MAX_DRAWS} draws")

    rows, cols, owner = pat.index_arrays
    ev = evaluate(pm, x)
    for it in range(cfg.max_iters + 1):
        g = gradient_from(pm, ev.inverse)
        if pm.k == 0 or np.max(np.abs(g)) < cfg.grad_tol:
            return _make_solution(pm, ev, None, it, entropy(ev.sigma))
        if it == cfg.max_iters:
            break
        try:
            d = densela.solve(newton_matrix_from(pm, ev), -g)
        except LinAlgError:
            raise ConvergenceError("singular-newton-matrix", iterations=it) from None
        if not g @ d > 0:
            d = g
        delta = np.zeros_like(ev.sigma)
        delta[rows, cols] = d[owner]
        t = 1.0
        while True:
            cand_x = ev.x + t * d
            sigma_new = ev.sigma + t * delta
            if densela.is_positive_definite(sigma_new):
                gain = _logdet_increase(ev.inverse, t * delta)
                if gain > 0:
                    break
            t *= cfg.contraction
            if t < cfg.min_step:
                raise ConvergenceError("step-underflow", iterations=it)
        if history is not None:
            history.append(gain)
        ev = evaluate(pm, cand_x)
    raise ConvergenceError("max-iters", iterations=cfg.max_iters)


class DualParameters(NamedTuple):
    """Multipliers ``lambda_ij`` for the specified positions ``(i, j)``.

    They live at the transposed positions ``(j, i)`` of a ``cols x rows``
    matrix, the candidate (pseudo)inverse.
    """

    positions: tuple[Position, ...]
    values: np.ndarray
    shape: tuple[int, int]

    def matrix(self) -> np.ndarray:
        lam = np.zeros(self.shape)
        for (i, j), v in zip(self.positions, self.values):
            lam[j, i] = v
        return lam

    @classmethod
    def from_inverse(cls, pm: PartialMatrix, inv) -> "DualParameters":
        """Mask a (pseudo)inverse to the transposed specified positions."""
        inv = np.asarray(inv, dtype=float)
        pos = tuple(sorted(pm.pattern.specified))
        return cls(pos, np.array([inv[j, i] for i, j in pos]), (pm.shape[1], pm.shape[0]))


def _dual_residual(pm, pos, lam_matrix):
    """Completion ``Lambda^#`` from the multipliers, its matching residual and Jacobian."""
    ri = np.array([p[0] for p in pos], dtype=int)
    cj = np.array([p[1] for p in pos], dtype=int)
    sigma_vals = np.array([pm.pattern.specified[p] for p in pos])
    if pm.mode == "square":
        s = densela.inverse(lam_matrix)
        a = s[np.ix_(ri, cj)]
        jac = -(a * a.T)
    else:
        gram = lam_matrix.T @ lam_matrix
        fact = densela.lu_factor(gram)
        k_inv = densela.lu_solve(fact, np.eye(gram.shape[0]))
        s = k_inv @ lam_matrix.T
        q = np.eye(lam_matrix.shape[0]) - lam_matrix @ s
        a = s[np.ix_(ri, cj)]
        jac = -(a * a.T) + k_inv[np.ix_(ri, ri)] * q[np.ix_(cj, cj)].T
    return s, s[ri, cj] - sigma_vals, jac


def _dual_well_posed(pm, lam_matrix, guard) -> bool:
    m = lam_matrix if pm.mode == "square" else lam_matrix.T @ lam_matrix
    norms = np.sqrt(np.sum(m * m, axis=1))
    bound = float(np.prod(norms))
    return bound > 0 and abs(densela.det(m)) > guard * bound


def dual_solve(pm: PartialMatrix, cfg: SolverConfig = SolverConfig(), start: DualParameters | None = None) -> Solution:
    """Solve for the multipliers instead of the unknowns.

    The candidate completion is ``Lambda^#`` (``Lambda^-1`` when square),
    where ``Lambda`` is supported on the transposed specified positions.
    Newton drives ``Lambda^#[i, j] - sigma_ij`` to zero over the specified
    positions. Only untied patterns are supported.

    Without ``start``, the multipliers are read off the inverse of the zero
    completion, or of a seeded random completion if that one is singular.
    """
    pat = pm.pattern
    if not pat.untied:
        raise ValueError("dual_solve needs an untied pattern (singleton classes)")
    if start is None:
        start = _default_dual_start(pm, cfg)
    pos = start.positions
    lam = np.asarray(start.values, dtype=float).copy()
    scale = 1.0 + pat.data_scale()
    tol = cfg.grad_tol * scale

    def build(values):
        return DualParameters(pos, values, start.shape).matrix()

    if not _dual_well_posed(pm, build(lam), cfg.singular_guard):
        raise ConvergenceError("singular-start", "initial multipliers give a singular matrix")
    s, res, jac = _dual_residual(pm, pos, build(lam))
    merit = float(res @ res)
    polish = 0
    for it in range(cfg.max_iters + 1):
        if np.max(np.abs(res), initial=0.0) < tol:
            polish += 1
            if polish > DUAL_POLISH_STEPS:
                break
        if it == cfg.max_iters:
            if polish:
                break
            raise ConvergenceError("max-iters", iterations=it)
        try:
            d = densela.solve(jac, -res)
        except LinAlgError:
            if polish:
                break
            raise ConvergenceError("singular-newton-matrix", iterations=it) from None
        t = 1.0
        accepted = False
        while t >= cfg.min_step:
            cand = lam + t * d
            if _dual_well_posed(pm, build(cand), cfg.singular_guard):
                s_new, res_new, jac_new = _dual_residual(pm, pos, build(cand))
                merit_new = float(res_new @ res_new)
                if merit_new < merit:
                    accepted = True
                    break
            t *= cfg.contraction
        if not accepted:
            if polish:
                break
            raise ConvergenceError("singular-iterate" if t < cfg.min_step else "step-underflow", iterations=it)
        lam, s, res, jac, merit = cand, s_new, res_new, jac_new, merit_new

    rows, cols, _ = pat.index_arrays
    ev = _try_evaluate(pm, s[rows, cols], cfg.singular_guard)
    if ev is None:
        raise ConvergenceError("singular-iterate", "dual completion is singular")
    sol = _make_solution(pm, ev, None, it)
    if sol.grad_norm >= cfg.grad_tol:
        raise ConvergenceError("dual-primal-mismatch", f"gradient {sol.grad_norm:.3e} at dual solution", it)
    return sol


def _default_dual_start(pm: PartialMatrix, cfg: SolverConfig) -> DualParameters:
    x = np.zeros(pm.k)
    rng = np.random.default_rng([cfg.seed, 0xD0A1])
    r = cfg.range_for(pm)
    for _ in range(DEMPSTER_MAX_DRAWS):
        ev = _try_evaluate(pm, x, cfg.singular_guard)
        if ev is not None:
            return DualParameters.from_inverse(pm, ev.inverse)
        x = rng.uniform(-r, r, size=pm.k)
    raise ConvergenceError("singular-start", "no nonsingular completion to start from")


class AppliedCompletion(NamedTuple):
    x: np.ndarray
    zeros_exploited: int


def apply_completion(sol: Solution, b, side: str = "left") -> AppliedCompletion:
    """Solve the linear system posed by a completed matrix.

    ``side="left"`` returns ``inv(Sigma) @ B`` (``Sigma X = B``);
    ``side="right"`` returns ``B @ pinv(Sigma)`` (``X Sigma = B``). The
    count of vanishing (pseudo)inverse entries is reported alongside.
    """
    b = np.asarray(b, dtype=float)
    if b.ndim == 1:
        b = b.reshape(-1, 1) if side == "left" else b.reshape(1, -1)
    inv = sol.inverse
    if side == "left":
        if b.shape[0] != inv.shape[1]:
            raise DimensionError(f"B needs {inv.shape[1]} rows for a left solve, got {b.shape[0]}")
        out = inv @ b
    elif side == "right":
        if b.shape[1] != inv.shape[0]:
            raise DimensionError(f"B needs {inv.shape[0]} columns for a right solve, got {b.shape[1]}")
        out = b @ inv
    else:
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    return AppliedCompletion(out, count_zeros(inv))
