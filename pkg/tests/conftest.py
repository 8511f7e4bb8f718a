"""Shared fixtures.

Every :class:`Solution` built by the solvers during the run is recorded, and
each test checks afterwards that those from untied patterns have vanishing
(pseudo)inverse entries at the transposed unknown positions.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from parsimony import solver
from parsimony.documents import parse_input
from parsimony.partialmat import normalize_rect

DATA = Path(__file__).parent / "data"

PRODUCED: list = []
_original_make_solution = solver._make_solution


def _recording_make_solution(pm, ev, *args, **kwargs):
    sol = _original_make_solution(pm, ev, *args, **kwargs)
    PRODUCED.append((pm, sol))
    return sol


solver._make_solution = _recording_make_solution


def transposed_entries_vanish(pm, sol, rtol: float = 1e-9) -> bool:
    scale = max(1.0, float(np.max(np.abs(sol.inverse))))
    rows, cols, _ = pm.pattern.index_arrays
    return bool(np.all(np.abs(sol.inverse[cols, rows]) < rtol * scale))


@pytest.fixture(autouse=True)
def _untied_solutions_are_critical():
    start = len(PRODUCED)
    yield
    for pm, sol in PRODUCED[start:]:
        if pm.pattern.untied:
            assert transposed_entries_vanish(pm, sol), f"solution x={sol.x} has nonzero transposed entries"


def load_pm(name: str):
    doc = parse_input((DATA / name).read_text(), name)
    return normalize_rect(doc.pattern)[0]


def data_path(name: str) -> str:
    return str(DATA / name)


def run_cli(capsys, *argv):
    """Run the CLI in-process and return (exit code, parsed JSON or raw text, stderr)."""
    from parsimony.cli import main

    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    try:
        return code, json.loads(out), err
    except json.JSONDecodeError:
        return code, out, err
