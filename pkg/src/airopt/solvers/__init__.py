"""Solvers for the weighted convex subproblem.

Routing (see :func:`solve_subproblem`):

* linear equality, l2 framing  -> closed form / KKT solve
* linear equality, l1 framing  -> ADMM with polishing
* everything else               -> proximal gradient
"""

from airopt.model import LinearEquality
from airopt.penalties import Mode
from airopt.solvers.admm import AdmmState, InfeasibleEqualityError, solve_weighted_l1_equality
from airopt.solvers.base import SolverOptions, SubproblemSolution, SubproblemSpec, kkt_residual
from airopt.solvers.closed_form import solve_weighted_l2_equality
from airopt.solvers.prox import (
    block_soft_threshold,
    project,
    prox_weighted_norm,
    solve_prox_subproblem,
)
from airopt.solvers.residual import stationarity_distance

__all__ = [
    "AdmmState",
    "InfeasibleEqualityError",
    "SolverOptions",
    "SubproblemSolution",
    "SubproblemSpec",
    "block_soft_threshold",
    "kkt_residual",
    "project",
    "prox_weighted_norm",
    "solve_prox_subproblem",
    "solve_subproblem",
    "solve_weighted_l1_equality",
    "solve_weighted_l2_equality",
    "stationarity_distance",
]


def solve_subproblem(spec: SubproblemSpec, opts: SolverOptions = SolverOptions(), *,
                     x0=None, state=None) -> SubproblemSolution:
    con = spec.constraint
    if isinstance(con, LinearEquality):
        if spec.mode is Mode.SQUARE:
            return solve_weighted_l2_equality(con.A, con.b, spec.weights, spec.groups,
                                              loss=spec.loss, constraint=con)
        return solve_weighted_l1_equality(con.A, con.b, spec.weights, spec.groups, opts,
                                          loss=spec.loss, constraint=con, x0=x0,
                                          state=state if isinstance(state, AdmmState) else None)
    return solve_prox_subproblem(spec, opts, x0=x0)
