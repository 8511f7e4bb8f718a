"""Reading input documents and writing result documents.

Input positions are 1-based, as written by people; everything past this
module is 0-based.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from .partialmat import Pattern, PatternError, parse_value


class InputError(ValueError):
    """Malformed input; the message names the offending location."""


@dataclass(frozen=True)
class InputDocument:
    pattern: Pattern
    raw: dict
    mode: str


def _load_json(text: str, source: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{source}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def _int(value, where: str, lo: int, hi: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise InputError(f"{where}: expected an integer, got {value!r}")
    if value < lo or (hi is not None and value > hi):
        bound = f"{lo}..{hi}" if hi is not None else f">= {lo}"
        raise InputError(f"{where}: {value} is out of range {bound}")
    return value


def _number(value, where: str) -> float:
    try:
        return parse_value(value)
    except ValueError as exc:
        raise InputError(f"{where}: {exc}") from None


def parse_input(text: str, source: str = "<input>") -> InputDocument:
    doc = _load_json(text, source)
    if not isinstance(doc, dict):
        raise InputError(f"{source}: top level must be an object")
    known = {"rows", "cols", "specified", "classes", "mode"}
    extra = sorted(set(doc) - known)
    if extra:
        raise InputError(f"{source}: unknown field(s) {', '.join(extra)}")
    for key in ("rows", "cols", "specified"):
        if key not in doc:
            raise InputError(f"{source}: missing field '{key}'")
    rows = _int(doc["rows"], f"{source}: rows", 1)
    cols = _int(doc["cols"], f"{source}: cols", 1)

    if not isinstance(doc["specified"], list):
        raise InputError(f"{source}: specified must be a list")
    spec: dict[tuple[int, int], float] = {}
    for n, entry in enumerate(doc["specified"]):
        where = f"{source}: specified[{n}]"
        if not isinstance(entry, dict) or set(entry) != {"i", "j", "v"}:
            raise InputError(f"{where}: expected an object with keys i, j, v")
        i = _int(entry["i"], f"{where}.i", 1, rows)
        j = _int(entry["j"], f"{where}.j", 1, cols)
        if (i - 1, j - 1) in spec:
            raise InputError(f"{where}: position ({i},{j}) is specified twice")
        spec[(i - 1, j - 1)] = _number(entry["v"], f"{where}.v")

    classes = None
    if doc.get("classes") is not None:
        if not isinstance(doc["classes"], list):
            raise InputError(f"{source}: classes must be a list")
        classes = []
        seen: dict[tuple[int, int], int] = {}
        for c, members in enumerate(doc["classes"]):
            where = f"{source}: classes[{c}]"
            if not isinstance(members, list) or not members:
                raise InputError(f"{where}: expected a non-empty list of [i, j] pairs")
            group = []
            for m, pos in enumerate(members):
                pw = f"{where}[{m}]"
                if not isinstance(pos, list) or len(pos) != 2:
                    raise InputError(f"{pw}: expected an [i, j] pair")
                i = _int(pos[0], f"{pw}[0]", 1, rows)
                j = _int(pos[1], f"{pw}[1]", 1, cols)
                p = (i - 1, j - 1)
                if p in spec:
                    raise InputError(f"{pw}: position ({i},{j}) is also specified")
                if p in seen:
                    raise InputError(f"{pw}: position ({i},{j}) already belongs to classes[{seen[p]}]")
                seen[p] = c
                group.append(p)
            classes.append(tuple(group))

    mode = doc.get("mode")
    inferred = "square" if rows == cols else "rectangular"
    if mode is not None and mode != inferred:
        if mode not in ("square", "rectangular"):
            raise InputError(f"{source}: mode must be 'square' or 'rectangular', got {mode!r}")
        raise InputError(f"{source}: mode '{mode}' contradicts the {rows}x{cols} shape")

    try:
        pattern = Pattern(rows, cols, spec, None if classes is None else tuple(classes))
    except PatternError as exc:
        raise InputError(f"{source}: {exc}") from None
    return InputDocument(pattern, doc, inferred)


def parse_matrix(text: str, source: str = "<matrix>") -> np.ndarray:
    """A matrix as a nested list or ``{"rows", "cols", "data"}``; entries may be fraction strings."""
    doc = _load_json(text, source)
    data = doc
    if isinstance(doc, dict):
        if "data" not in doc:
            raise InputError(f"{source}: missing field 'data'")
        data = doc["data"]
    if not isinstance(data, list) or not data or not all(isinstance(r, list) and r for r in data):
        raise InputError(f"{source}: expected a non-empty list of non-empty rows")
    width = len(data[0])
    out = np.empty((len(data), width))
    for r, row in enumerate(data):
        if len(row) != width:
            raise InputError(f"{source}: row {r + 1} has {len(row)} entries, expected {width}")
        for c, v in enumerate(row):
            out[r, c] = _number(v, f"{source}: data[{r}][{c}]")
    if isinstance(doc, dict):
        if doc.get("rows", out.shape[0]) != out.shape[0] or doc.get("cols", out.shape[1]) != out.shape[1]:
            raise InputError(f"{source}: declared shape does not match data {out.shape[0]}x{out.shape[1]}")
    return out


def fmt_float(v: float) -> str:
    v = float(v)
    if math.isnan(v) or math.isinf(v):
        return json.dumps(str(v))
    return format(v, ".17g")


def _is_numeric_row(value) -> bool:
    return isinstance(value, list) and all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
    )


def dumps(obj, indent: int = 0) -> str:
    """JSON with floats at 17 significant digits and numeric rows kept on one line."""
    pad = "  " * indent
    inner = "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        if len(obj) <= 4 and all(not isinstance(v, (dict, list, tuple)) for v in obj.values()):
            return "{" + ", ".join(f"{json.dumps(str(k))}: {dumps(v)}" for k, v in obj.items()) + "}"
        items = [f"{inner}{json.dumps(str(k))}: {dumps(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        obj = list(obj)
        if not obj:
            return "[]"
        if _is_numeric_row(obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        return "[\n" + ",\n".join(inner + dumps(v, indent + 1) for v in obj) + "\n" + pad + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt_float(obj)
    return json.dumps(obj)
