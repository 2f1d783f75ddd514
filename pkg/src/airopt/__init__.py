"""Adaptively iterative reweighted methods for nonconvex sparse optimization."""

from airopt.air import AirConfig, SolveReport, Status, air_solve, level_set_guard, optimality_residual
from airopt.model import (
    Box,
    Free,
    GroupStructure,
    L2Ball,
    LeastSquares,
    LinearEquality,
    NonNegative,
    ProblemSpec,
    Quadratic,
    ZeroLoss,
    objective_J,
    objective_J0,
)
from airopt.penalties import Mode, Penalty, PenaltyKind
from airopt.solvers import SolverOptions

__version__ = "0.1.0"
