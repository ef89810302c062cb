"""Dantzig-Wolfe decomposition for quasi-variational inequalities."""

from ._core import (
    Problem,
    gen_movset,
    gen_walrasian,
    kkt_residual,
    make_movset,
    make_walrasian,
    movset_initial_point,
    project_ball_nonneg,
    project_simplex,
    solve_direct,
    solve_dw,
    walras_initial_point,
)

__all__ = [
    "Problem",
    "gen_movset",
    "gen_walrasian",
    "kkt_residual",
    "make_movset",
    "make_walrasian",
    "movset_initial_point",
    "project_ball_nonneg",
    "project_simplex",
    "solve_direct",
    "solve_dw",
    "walras_initial_point",
]
