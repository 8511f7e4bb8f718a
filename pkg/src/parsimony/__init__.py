"""Parsimonious completion of partial matrices.

A completion is sought whose inverse (square case) or Moore-Penrose
pseudoinverse (wide, full-row-rank case) vanishes at the transposed
positions of the unknowns. Those completions are exactly the critical
points of ``log|det Sigma(x)|`` (resp. ``log det (Sigma Sigma^T)^(1/2)``).
"""

__version__ = "0.1.0"

from .partialmat import (  # noqa: E402
    PartialMatrix,
    Pattern,
    assemble,
    build_pattern,
    gradient,
    newton_matrix,
    normalize_rect,
    objective,
    residual_report,
    structural_precheck,
)
from .solver import (  # noqa: E402
    Solution,
    SolutionSet,
    SolverConfig,
    apply_completion,
    classify,
    dempster_spd,
    dual_solve,
    entropy,
    multistart,
    newton,
)
