"""``parsimony`` command line tool.

Exit codes: 0 success, 1 usage or input error, 2 no solution, 3 gradient
check failure.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .densela import DimensionError, LinAlgError, sym_eig
from .documents import InputDocument, InputError, dumps, fmt_float, parse_input, parse_matrix
from .oracle import ProbeError, fd_gradient
from .partialmat import (
    EvaluationError,
    PartialMatrix,
    gradient,
    normalize_rect,
    parse_value,
    structural_precheck,
)
from .solver import (
    ConvergenceError,
    DomainError,
    PatternNotSymmetricError,
    Solution,
    SolverConfig,
    apply_completion,
    dempster_spd,
    entropy,
    inspect_point,
    multistart,
)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NO_SOLUTION = 2
EXIT_GRADCHECK = 3

GRADCHECK_RTOL = 1e-5
SINGULARITY_MARGIN = 1e-3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load(path: str) -> tuple[InputDocument, PartialMatrix]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    doc = parse_input(text, path)
    pm, _ = normalize_rect(doc.pattern)
    return doc, pm


def _parse_x(spec: str, k: int) -> np.ndarray:
    parts = [p for p in spec.split(",") if p.strip()]
    try:
        x = np.array([parse_value(p) for p in parts])
    except ValueError as exc:
        raise InputError(f"--x: {exc}") from None
    if len(x) != k:
        raise InputError(f"--x: expected {k} value(s), got {len(x)}")
    return x


def _config(args, **overrides) -> SolverConfig:
    fields = dict(
        starts=getattr(args, "starts", 200),
        seed=getattr(args, "seed", 0),
        start_range=getattr(args, "range", None),
        workers=getattr(args, "workers", 1),
    )
    if getattr(args, "tol", None) is not None:
        fields["grad_tol"] = args.tol
    fields.update(overrides)
    try:
        return SolverConfig(**fields)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _config_echo(cfg: SolverConfig) -> dict:
    return {
        "grad_tol": cfg.grad_tol,
        "dedup_tol": cfg.dedup_tol,
        "max_iters": cfg.max_iters,
        "starts": cfg.starts,
        "start_range": cfg.start_range,
        "seed": cfg.seed,
        "singular_guard": cfg.singular_guard,
    }


def _oriented(pm: PartialMatrix, sol: Solution) -> Solution:
    if not pm.transposed:
        return sol
    return replace(sol, sigma=sol.sigma.T, inverse=sol.inverse.T)


def _solution_record(pm: PartialMatrix, sol: Solution) -> dict:
    out = _oriented(pm, sol)
    residual_map = []
    for (i, j), v in sol.residuals.entries.items():
        if pm.transposed:
            i, j = j, i
        residual_map.append({"i": i + 1, "j": j + 1, "value": v})
    rec = {
        "x": [float(v) for v in sol.x],
        "objective": sol.objective,
        "grad_norm": sol.grad_norm,
        "sigma": out.sigma.tolist(),
        "inverse_or_pinv": out.inverse.tolist(),
        "residual_map": residual_map,
        "flags": {
            "symmetric": sol.flags.symmetric,
            "toeplitz": sol.flags.toeplitz,
            "positive_definite": sol.flags.positive_definite,
            "zero_count": sol.flags.zero_count,
        },
        "provenance": {"start_index": sol.start_index, "iterations": sol.iterations},
    }
    if sol.entropy is not None:
        rec["entropy"] = sol.entropy
    return rec


def _document(command: str, doc: InputDocument | None, pm, solutions, diagnostics: dict, **extra) -> dict:
    out = {
        "tool": "parsimony",
        "version": __version__,
        "command": command,
    }
    if doc is not None:
        out["input"] = doc.raw
        out["mode"] = doc.mode
        out["transposed"] = bool(pm.transposed)
    out["solutions"] = [_solution_record(pm, s) for s in solutions]
    out.update(extra)
    out["diagnostics"] = diagnostics
    return out


def _render_matrix(m, indent: str = "    ") -> list[str]:
    cells = [[fmt_float(v) for v in row] for row in m]
    width = max(len(c) for row in cells for c in row)
    return [indent + "  ".join(c.rjust(width) for c in row) for row in cells]


def render_text(document: dict) -> str:
    """Human-readable rendering of an output document (same numbers as the JSON)."""
    lines = [f"parsimony {document['version']} :: {document['command']}"]
    if "mode" in document:
        lines.append(f"mode: {document['mode']}" + (" (solved transposed)" if document.get("transposed") else ""))
    diag = document["diagnostics"]
    for w in diag.get("warnings", []):
        lines.append(f"warning: {w}")
    for key, value in diag.items():
        if key == "warnings":
            continue
        if isinstance(value, dict):
            body = ", ".join(f"{k}={dumps(v)}" for k, v in value.items()) or "none"
            lines.append(f"{key}: {body}")
        else:
            lines.append(f"{key}: {dumps(value)}")
    sols = document["solutions"]
    lines.append(f"solutions: {len(sols)}")
    for n, s in enumerate(sols, 1):
        lines.append("")
        lines.append(f"[{n}] x = " + ", ".join(fmt_float(v) for v in s["x"]))
        lines.append(f"    objective = {fmt_float(s['objective'])}   grad_norm = {fmt_float(s['grad_norm'])}")
        if "entropy" in s:
            lines.append(f"    entropy = {fmt_float(s['entropy'])}")
        if "gradient" in s:
            lines.append("    gradient = " + ", ".join(fmt_float(v) for v in s["gradient"]))
        f = s["flags"]
        lines.append(
            f"    symmetric={f['symmetric']} toeplitz={f['toeplitz']} "
            f"positive_definite={f['positive_definite']} zero_count={f['zero_count']}"
        )
        lines.append("    sigma:")
        lines.extend(_render_matrix(s["sigma"], "      "))
        lines.append("    inverse_or_pinv:")
        lines.extend(_render_matrix(s["inverse_or_pinv"], "      "))
        if s["residual_map"]:
            lines.append("    transposed-position entries:")
            for r in s["residual_map"]:
                lines.append(f"      ({r['i']},{r['j']}) -> {fmt_float(r['value'])}")
    if "solution_matrix" in document:
        lines.append("")
        lines.append(f"X ({document['side']}), zeros exploited = {document['zeros_exploited']}:")
        lines.extend(_render_matrix(document["solution_matrix"]))
    if "report" in document:
        lines.append("")
        lines.append("report:")
        for k, v in document["report"].items():
            lines.append(f"  {k}: {dumps(v)}")
    return "\n".join(lines) + "\n"


def _emit(document: dict, args) -> None:
    text = render_text(document) if args.format == "text" else dumps(document) + "\n"
    if getattr(args, "out", None):
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_complete(args) -> int:
    doc, pm = _load(args.file)
    cfg = _config(args)
    warnings = structural_precheck(pm)
    result = multistart(pm, cfg)
    diagnostics = {
        "warnings": warnings,
        "starts": result.starts,
        "converged": result.converged,
        "failures": dict(sorted(result.failures.items())),
        "config": _config_echo(cfg),
    }
    _emit(_document("complete", doc, pm, result.solutions, diagnostics), args)
    return EXIT_OK if len(result) else EXIT_NO_SOLUTION


def cmd_dempster(args) -> int:
    doc, pm = _load(args.file)
    cfg = _config(args)
    diagnostics = {"warnings": [], "failures": {}, "config": _config_echo(cfg)}
    try:
        sol = dempster_spd(pm, cfg)
    except PatternNotSymmetricError as exc:
        raise InputError(f"{args.file}: {exc}") from None
    except (ConvergenceError, EvaluationError, DomainError) as exc:
        reason = getattr(exc, "reason", type(exc).__name__)
        diagnostics["failures"] = {reason: 1}
        diagnostics["warnings"].append(str(exc))
        _emit(_document("dempster", doc, pm, [], diagnostics), args)
        return EXIT_NO_SOLUTION
    _emit(_document("dempster", doc, pm, [sol], diagnostics), args)
    return EXIT_OK


def cmd_verify(args) -> int:
    doc, pm = _load(args.file)
    x = _parse_x(args.x, pm.k)
    diagnostics = {"warnings": structural_precheck(pm), "failures": {}}
    try:
        sol = inspect_point(pm, x)
    except EvaluationError as exc:
        diagnostics["warnings"].append(f"completion cannot be evaluated: {exc}")
        _emit(_document("verify", doc, pm, [], diagnostics), args)
        return EXIT_OK
    record_extra = {"gradient": [float(v) for v in gradient(pm, x)]}
    document = _document("verify", doc, pm, [sol], diagnostics)
    document["solutions"][0].update(record_extra)
    if sol.flags.positive_definite:
        document["solutions"][0]["entropy"] = entropy(sol.sigma)
    _emit(document, args)
    return EXIT_OK


def _conditioning(sigma: np.ndarray) -> float:
    w = sym_eig(sigma @ sigma.T).values
    if w[-1] <= 0:
        return 0.0
    return float(np.sqrt(max(w[0], 0.0) / w[-1]))


def cmd_gradcheck(args) -> int:
    doc, pm = _load(args.file)
    cfg = _config(args)
    r = cfg.range_for(pm)
    rng = np.random.default_rng([cfg.seed, 0x6C])
    worst = None
    checked = excluded = 0
    if pm.k > 0:
        for _ in range(args.samples):
            x = rng.uniform(-r, r, size=pm.k)
            try:
                sigma = inspect_point(pm, x).sigma
                if _conditioning(sigma) < SINGULARITY_MARGIN:
                    excluded += 1
                    continue
                g = gradient(pm, x)
                fd = fd_gradient(pm, x)
            except (EvaluationError, ProbeError, LinAlgError):
                excluded += 1
                continue
            checked += 1
            err = float(np.max(np.abs(g - fd))) / max(1.0, float(np.max(np.abs(g))))
            if worst is None or err > worst["rel_error"]:
                worst = {"x": x.tolist(), "analytic": g.tolist(), "fd": fd.tolist(), "rel_error": err}
    if pm.k > 0 and checked == 0:
        raise InputError(f"{args.file}: every gradient probe hit a singular completion")
    passed = worst is None or worst["rel_error"] < GRADCHECK_RTOL
    report = {
        "samples": args.samples,
        "checked": checked,
        "excluded": excluded,
        "tolerance": GRADCHECK_RTOL,
        "max_rel_error": 0.0 if worst is None else worst["rel_error"],
        "passed": passed,
    }
    if worst is not None:
        report["worst"] = worst
    diagnostics = {"warnings": [], "failures": {}}
    _emit(_document("gradcheck", doc, pm, [], diagnostics, report=report), args)
    return EXIT_OK if passed else EXIT_GRADCHECK


def cmd_solve(args) -> int:
    doc, pm = _load(args.file)
    try:
        b = parse_matrix(Path(args.bfile).read_text(encoding="utf-8"), args.bfile)
    except OSError as exc:
        raise InputError(f"{args.bfile}: {exc.strerror}") from None
    cfg = _config(args)
    diagnostics = {"warnings": structural_precheck(pm), "failures": {}}
    if args.x is not None:
        try:
            sol = inspect_point(pm, _parse_x(args.x, pm.k))
        except EvaluationError as exc:
            raise InputError(f"--x: {exc}") from None
    else:
        result = multistart(pm, cfg)
        diagnostics["failures"] = dict(sorted(result.failures.items()))
        if not len(result):
            _emit(_document("solve", doc, pm, [], diagnostics), args)
            return EXIT_NO_SOLUTION
        sol = result[0]
    side = args.side or ("left" if pm.mode == "square" else "right")
    try:
        applied = apply_completion(_oriented(pm, sol), b, side)
    except DimensionError as exc:
        raise InputError(f"{args.bfile}: {exc}") from None
    document = _document(
        "solve",
        doc,
        pm,
        [sol],
        diagnostics,
        side=side,
        solution_matrix=applied.x.tolist(),
        zeros_exploited=applied.zeros_exploited,
    )
    _emit(document, args)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="parsimony", description="Complete partial matrices so the (pseudo)inverse vanishes on the unknown pattern.")
    parser.add_argument("--version", action="version", version=f"parsimony {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, search=True):
        p.add_argument("file", help="partial matrix document (JSON)")
        p.add_argument("--format", choices=("json", "text"), default="json")
        p.add_argument("--out", help="write the result here instead of stdout")
        p.add_argument("--seed", type=int, default=0)
        if search:
            p.add_argument("--starts", type=int, default=200)
            p.add_argument("--range", type=float, default=None, help="sample starts on [-R, R]^k")
            p.add_argument("--tol", type=float, default=None, help="gradient tolerance")
            p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("complete", help="find critical completions by multistart Newton")
    common(p)
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("dempster", help="maximum-entropy positive definite completion")
    common(p, search=False)
    p.add_argument("--tol", type=float, default=None, help="gradient tolerance")
    p.set_defaults(func=cmd_dempster)

    p = sub.add_parser("verify", help="report residuals and structure at a given completion")
    common(p, search=False)
    p.add_argument("--x", required=True, help="comma-separated unknowns; fractions p/q allowed")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    common(p, search=False)
    p.add_argument("--samples", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("solve", help="complete, then solve the associated linear system")
    common(p)
    p.add_argument("bfile", help="right-hand side matrix B (JSON)")
    p.add_argument("--side", choices=("left", "right"), default=None)
    p.add_argument("--x", default=None, help="use this completion instead of searching")
    p.set_defaults(func=cmd_solve)
    return parser


def _glue_negative_values(argv: list[str]) -> list[str]:
    # "--x -16/929" would otherwise be read as an unknown option
    out = []
    i = 0
    while i < len(argv):
        tok = argv[i]
        if tok in ("--x", "--range", "--tol") and i + 1 < len(argv) and argv[i + 1].startswith("-"):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
            continue
        out.append(tok)
        i += 1
    return out


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(_glue_negative_values(argv))
        if getattr(args, "samples", 1) < 1:
            raise UsageError("--samples must be at least 1")
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"parsimony: error: {exc}\n")
        return EXIT_INPUT
    except InputError as exc:
        sys.stderr.write(f"parsimony: input error: {exc}\n")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
