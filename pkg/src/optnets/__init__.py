"""Argmin solution functions of LPs/QPs as composable network nodes."""

from .lp_core import (
    LinearProgram,
    QuadraticProgram,
    SolveResult,
    SolverOptions,
    Status,
    check_kkt,
    solve_lp,
    solve_qp,
    validate_dpp,
)

__version__ = "0.1.0"
