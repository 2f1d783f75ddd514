from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from airopt.model import (
    ConstraintSet,
    FEAS_TOL,
    GroupStructure,
    InfeasiblePointError,
    SmoothLoss,
    ZeroLoss,
    DimensionError,
    surrogate_value,
)
from airopt.penalties import Mode
from airopt.solvers.residual import stationarity_distance


@dataclass(frozen=True)
class SolverOptions:
    max_inner_iter: int = 5000
    primal_tol: float = 1e-8
    dual_tol: float = 1e-8
    admm_rho: float = 1.0
    step_rule: str = "backtracking"  # or "fixed" (step 1/L)
    shrink: float = 0.5

    def __post_init__(self):
        if int(self.max_inner_iter) < 1:
            raise ValueError("max_inner_iter must be a positive integer")
        for name in ("primal_tol", "dual_tol", "admm_rho"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be positive, got {v}")
        if self.step_rule not in ("backtracking", "fixed"):
            raise ValueError(f"step_rule must be 'backtracking' or 'fixed', got {self.step_rule!r}")
        if not (0 < self.shrink < 1):
            raise ValueError("backtracking shrink factor must lie in (0,1)")


@dataclass
class SubproblemSpec:
    """Weighted convex subproblem ``min f(x) + sum_i w_i c_i(x_i)`` over ``X``."""

    loss: SmoothLoss
    weights: np.ndarray
    mode: Mode
    groups: GroupStructure
    constraint: ConstraintSet

    def __post_init__(self):
        self.mode = Mode.parse(self.mode)
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        if self.weights.size != self.groups.m:
            raise DimensionError(f"{self.weights.size} weights for {self.groups.m} groups")
        if np.any(~np.isfinite(self.weights)) or np.any(self.weights <= 0):
            raise ValueError("weights must be finite and positive")
        for part in (self.loss, self.constraint):
            pn = getattr(part, "n", None)
            if pn is not None and pn != self.groups.n:
                raise DimensionError("subproblem dimensions disagree")

    @property
    def n(self):
        return self.groups.n

    def objective(self, x, tol_scale=1.0):
        return surrogate_value(self.loss, self.mode, self.groups, self.constraint,
                               self.weights, x, tol_scale=tol_scale)


@dataclass
class SubproblemSolution:
    x: np.ndarray
    objective: float
    kkt_residual: float
    inner_iterations: int
    converged: bool
    state: Any = field(default=None, repr=False)


def kkt_residual(spec: SubproblemSpec, x, *, warm_multiplier=None, return_multiplier=False):
    """Distance from 0 to the subdifferential of the subproblem at ``x``."""
    x = np.asarray(x, dtype=float)
    viol = spec.constraint.violation(x)
    if viol > FEAS_TOL * (1 + np.linalg.norm(x)):
        raise InfeasiblePointError(f"point violates the constraint by {viol:.3e}", viol)
    groups = spec.groups
    g = spec.loss.grad(x) if not isinstance(spec.loss, ZeroLoss) else np.zeros_like(x)
    w = spec.weights
    if spec.mode is Mode.SQUARE:
        g = g + 2.0 * groups.expand(w) * x
        radius = np.zeros(groups.m)
    else:
        norms = groups.norms(x)
        nz = norms > 0
        with np.errstate(invalid="ignore", divide="ignore"):
            scale = np.where(nz, w / np.where(nz, norms, 1.0), 0.0)
        g = g + groups.expand(scale) * x
        radius = np.where(nz, 0.0, w)
    return stationarity_distance(g, radius, groups, spec.constraint, x,
                                 warm_multiplier=warm_multiplier,
                                 return_multiplier=return_multiplier)
