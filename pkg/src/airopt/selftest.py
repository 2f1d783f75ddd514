"""Fast invariant checks runnable from an installed package (``airopt selftest``)."""

from __future__ import annotations

import itertools
import math

import numpy as np

from airopt.air import AirConfig, air_solve, optimality_residual
from airopt.model import (
    GroupStructure,
    LeastSquares,
    LinearEquality,
    ProblemSpec,
    ZeroLoss,
    objective_J,
    objective_J0,
    sandwich_bounds,
)
from airopt.penalties import Mode, Penalty, r_prime, r_value, weight
from airopt.solvers import (
    SolverOptions,
    SubproblemSpec,
    kkt_residual,
    solve_prox_subproblem,
    solve_weighted_l1_equality,
    solve_weighted_l2_equality,
)
from airopt.model import Free

CATALOG = (Penalty.exp(1.5), Penalty.lpn(0.5), Penalty.log(2.0), Penalty.fra(0.7),
           Penalty.tan(1.3), Penalty.scad(1.0, 3.7), Penalty.mcp(1.0, 2.5))


def _check_derivatives(rng):
    worst = 0.0
    h = 1e-6
    for pen in CATALOG:
        for c in rng.uniform(0.05, 5.0, 20):
            if any(abs(c - bp) < 10 * h for bp in pen.breakpoints):
                continue
            fd = (r_value(pen, c + h) - r_value(pen, c - h)) / (2 * h)
            worst = max(worst, abs(fd - r_prime(pen, c)) / (1 + r_prime(pen, c)))
            u = c * c + 0.3
            fd2 = (r_value(pen, math.sqrt(u + h)) - r_value(pen, math.sqrt(u - h))) / (2 * h)
            worst = max(worst, abs(fd2 - weight(pen, Mode.SQUARE, c * c, 0.3)) / (1 + fd2))
    return worst <= 1e-6, f"max relative error {worst:.2e}"


def _check_sandwich(rng):
    groups = GroupStructure.singletons(5)
    for pen, mode in itertools.product(CATALOG, Mode):
        prob = ProblemSpec(ZeroLoss(5), pen, mode, groups)
        for _ in range(20):
            x = rng.standard_normal(5) * (rng.random(5) < 0.6)
            eps = rng.uniform(1e-4, 1.0, 5)
            if mode is Mode.SQUARE:
                continue  # the bound is stated for the absolute-value framing
            lo, hi = sandwich_bounds(prob, x, eps)
            J = objective_J(prob, x, eps)
            if not (lo - 1e-10 <= J <= hi + 1e-10):
                return False, f"{pen} at {x}: {lo} <= {J} <= {hi} fails"
            if objective_J(prob, x, 0.0) != objective_J0(prob, x):
                return False, "J(x; 0) differs from J0(x)"
    return True, "bounds hold"


def _check_tiny_instance(_rng):
    prob = ProblemSpec(ZeroLoss(2), Penalty.lpn(0.1), Mode.ABS, GroupStructure.singletons(2),
                       LinearEquality([[1.0, 2.0]], [2.0]))
    rep = air_solve(prob, None, AirConfig())
    err = float(np.max(np.abs(rep.x_final - np.array([0.0, 1.0]))))
    return err <= 1e-4, f"x = {rep.x_final}, status {rep.status.value}"


def _check_l2_closed_form(rng):
    worst = 0.0
    for _ in range(10):
        q, n = 3, 6
        A = rng.standard_normal((q, n))
        b = rng.standard_normal(q)
        w = rng.uniform(0.1, 3.0, n)
        x = solve_weighted_l2_equality(A, b, w, GroupStructure.singletons(n)).x
        K = np.block([[np.diag(2 * w), A.T], [A, np.zeros((q, q))]])
        ref = np.linalg.solve(K, np.concatenate([np.zeros(n), b]))[:n]
        worst = max(worst, float(np.max(np.abs(x - ref))))
    return worst <= 1e-8, f"max deviation {worst:.2e}"


def _check_l1_vertices(rng):
    worst = 0.0
    for _ in range(10):
        q, n = 2, 5
        A = rng.standard_normal((q, n))
        b = rng.standard_normal(q)
        w = rng.uniform(0.1, 3.0, n)
        best = math.inf
        for cols in itertools.combinations(range(n), q):
            B = A[:, cols]
            if abs(np.linalg.det(B)) < 1e-12:
                continue
            best = min(best, float(w[list(cols)] @ np.abs(np.linalg.solve(B, b))))
        sol = solve_weighted_l1_equality(A, b, w, GroupStructure.singletons(n))
        worst = max(worst, abs(sol.objective - best) / (1 + best))
    return worst <= 1e-5, f"max relative gap {worst:.2e}"


def _check_prox(_rng):
    groups = GroupStructure.contiguous([2])
    spec = SubproblemSpec(LeastSquares(np.eye(2), [3.0, 4.0]), [1.0], Mode.ABS, groups, Free())
    x = solve_prox_subproblem(spec, SolverOptions()).x
    err = float(np.max(np.abs(x - np.array([2.4, 3.2]))))
    return err <= 1e-6, f"x = {x}"


def _check_kkt(_rng):
    spec = SubproblemSpec(ZeroLoss(2), [1.0, 2.0], Mode.ABS, GroupStructure.singletons(2),
                          LinearEquality([[1.0, 1.0]], [2.0]))
    good = kkt_residual(spec, np.array([2.0, 0.0]))
    bad = kkt_residual(spec, np.array([0.0, 2.0]))
    return good <= 1e-8 and bad > 0.4, f"residuals {good:.2e} and {bad:.3f}"


def _check_residual(_rng):
    prob = ProblemSpec(ZeroLoss(2), Penalty.lpn(0.1), Mode.ABS, GroupStructure.singletons(2),
                       LinearEquality([[1.0, 2.0]], [2.0]))
    at_opt = optimality_residual(prob, np.array([0.0, 1.0]), 1e-6)
    off = optimality_residual(prob, np.array([2.0, 0.0]), 3.0)
    return at_opt <= 1e-4 and off > 1e-3, f"residuals {at_opt:.2e} and {off:.2e}"


CHECKS = (
    ("penalty derivatives match finite differences", _check_derivatives),
    ("relaxed objective sandwich bound", _check_sandwich),
    ("two-variable instance reaches its global minimizer", _check_tiny_instance),
    ("weighted l2 closed form matches dense KKT solve", _check_l2_closed_form),
    ("weighted l1 solver matches vertex enumeration", _check_l1_vertices),
    ("block soft-threshold prox", _check_prox),
    ("subproblem KKT residual", _check_kkt),
    ("optimality residual separates stationary points", _check_residual),
)


def run_selftest(out=print, seed=0):
    """Run every check; returns the number of failures."""
    rng = np.random.default_rng(seed)
    failures = 0
    for name, check in CHECKS:
        try:
            ok, detail = check(rng)
        except Exception as exc:  # a crash is a failed check, not a crashed selftest
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        failures += not ok
        out(f"{'PASS' if ok else 'FAIL'}  {name} ({detail})")
    out(f"{len(CHECKS) - failures}/{len(CHECKS)} checks passed")
    return failures
