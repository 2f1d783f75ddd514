"""Projections, proximal maps and the proximal-gradient subproblem solver."""

from __future__ import annotations

import numpy as np

from airopt.model import Box, Free, LinearEquality, NonNegative, ZeroLoss
from airopt.penalties import Mode
from airopt.solvers.base import SolverOptions, SubproblemSolution, SubproblemSpec, kkt_residual

# Steps near the optimum lower the objective by less than its rounding error;
# rejecting those would stall the iteration short of dual_tol.
_ROUNDING = 1e-14


def project(constraint, v):
    """Euclidean projection onto the constraint set."""
    return constraint.project(v)


def block_soft_threshold(v, thresholds, groups):
    """``prox`` of ``sum_i t_i ||v_i||``: scales each block by ``(1 - t_i/||v_i||)_+``."""
    v = np.asarray(v, dtype=float)
    t = np.asarray(thresholds, dtype=float)
    if groups.singleton:
        texp = groups.expand(t)
        return np.sign(v) * np.maximum(np.abs(v) - texp, 0.0)
    norms = groups.norms(v)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(norms > 0, np.maximum(1.0 - t / norms, 0.0), 0.0)
    return v * groups.expand(scale)


def prox_weighted_norm(v, thresholds, groups, constraint, *, tol=1e-13, max_iter=10000):
    """``argmin_x 0.5||x - v||^2 + sum_i t_i ||x_i|| + indicator(X)``.

    Exact in closed form for Free and NonNegative sets and for boxes with
    singleton groups; otherwise a Dykstra-type alternation of the two
    proximal maps is run to ``tol``.
    """
    if isinstance(constraint, Free):
        return block_soft_threshold(v, thresholds, groups)
    if isinstance(constraint, NonNegative):
        return block_soft_threshold(np.maximum(v, 0.0), thresholds, groups)
    if isinstance(constraint, Box) and groups.singleton:
        return constraint.project(block_soft_threshold(v, thresholds, groups))
    x = np.asarray(v, dtype=float).copy()
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    y = x
    for _ in range(max_iter):
        y = constraint.project(x + p)
        p = x + p - y
        x_new = block_soft_threshold(y + q, thresholds, groups)
        q = y + q - x_new
        change = np.linalg.norm(x_new - x) + np.linalg.norm(x_new - y)
        x = x_new
        if change <= tol * (1 + np.linalg.norm(x)):
            break
    return constraint.project(x)


def _sufficient_decrease(f, f_new, g, g_new, d, step):
    """Backtracking test ``f_new <= f + g.d + ||d||^2 / (2 step)``.

    Once the margin ``||d||^2 / (2 step)`` is near the rounding error of ``f``
    the value test is noise, so the curvature form
    ``(g_new - g).d <= ||d||^2 / step`` is used instead; the two agree exactly
    for quadratic ``f``.
    """
    dd = d @ d
    if dd / (2 * step) > 1e-8 * (1 + abs(f)):
        return f_new <= f + g @ d + dd / (2 * step) + 1e-15 * abs(f)
    return (g_new - g) @ d <= dd / step * (1 + 1e-12)


class _Smooth:
    """Split of the subproblem objective into a smooth part and a proximable part.

    In the squared framing ``sum_i w_i ||x_i||^2`` goes into the proximal
    step whenever the set is coordinatewise (then the prox is a scaling
    followed by a clip), so large weights do not shrink the step size.
    Only the ball keeps it in the smooth part.
    """

    def __init__(self, spec: SubproblemSpec):
        self.spec = spec
        self.loss = spec.loss
        self.square = spec.mode is Mode.SQUARE
        self.implicit = self.square and isinstance(spec.constraint, (Free, NonNegative, Box))
        self.explicit = self.square and not self.implicit
        self.wexp = spec.groups.expand(spec.weights)
        self.L = spec.loss.lipschitz() + (2.0 * float(self.wexp.max()) if self.explicit else 0.0)

    def value(self, x):
        v = self.loss.value(x)
        if self.explicit:
            v += float(self.wexp @ (x * x))
        return v

    def grad(self, x):
        g = self.loss.grad(x)
        if self.explicit:
            g = g + 2.0 * self.wexp * x
        return g

    def nonsmooth(self, x):
        if self.implicit:
            return float(self.wexp @ (x * x))
        if self.square:
            return 0.0
        return float(self.spec.weights @ self.spec.groups.norms(x))

    def prox(self, v, step):
        if self.implicit:
            return self.spec.constraint.project(v / (1.0 + 2.0 * step * self.wexp))
        if self.square:
            return self.spec.constraint.project(v)
        return prox_weighted_norm(v, step * self.spec.weights, self.spec.groups, self.spec.constraint)


def solve_prox_subproblem(spec: SubproblemSpec, opts: SolverOptions = SolverOptions(),
                          x0=None, *, history=None):
    """Proximal-gradient method for sets with cheap projections.

    Each step is monotone when ``step_rule='backtracking'``: the sufficient
    decrease test guarantees the full objective does not increase.  Iterates
    are always feasible.  ``history``, when a list, receives the objective
    after every iteration.
    """
    if isinstance(spec.constraint, LinearEquality):
        raise TypeError("equality constraints are handled by the dedicated solvers")
    sm = _Smooth(spec)
    x = spec.constraint.project(np.zeros(spec.n) if x0 is None else np.asarray(x0, dtype=float))
    fx = sm.value(x)
    gx = sm.grad(x)
    obj = fx + sm.nonsmooth(x)
    L = sm.L
    step = 1.0 / L if L > 0 else 1.0
    backtrack = opts.step_rule == "backtracking"
    converged = False
    it = 0
    for it in range(1, opts.max_inner_iter + 1):
        if backtrack:
            step = min(step / opts.shrink, 1e12)
        while True:
            x_new = sm.prox(x - step * gx, step)
            d = x_new - x
            f_new = sm.value(x_new)
            g_new = sm.grad(x_new)
            if not backtrack or _sufficient_decrease(fx, f_new, gx, g_new, d, step):
                break
            step *= opts.shrink
            if step < 1e-20:
                break
        obj_new = f_new + sm.nonsmooth(x_new)
        gmap = np.linalg.norm(d) / step
        if backtrack and obj_new > obj + _ROUNDING * (1 + abs(obj)):
            # keep the sequence monotone up to rounding of the objective itself
            x_new, f_new, obj_new = x, fx, obj
        if x_new is not x:
            gx = g_new
        x, fx, obj = x_new, f_new, obj_new
        if history is not None:
            history.append(obj)
        if gmap <= opts.dual_tol:
            converged = True
            break
    res = kkt_residual(spec, x)
    return SubproblemSolution(x=x, objective=obj, kkt_residual=res,
                              inner_iterations=it, converged=converged)
