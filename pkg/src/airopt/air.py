"""Adaptively iterative reweighted outer loop.

Each outer iteration freezes weights ``w_i = phi'(c_i(x^k) + eps^k_i)``,
solves the convex surrogate for ``x^{k+1}``, then shrinks the relaxation.
"""

from __future__ import annotations

import csv
import enum
import io
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from airopt.model import (
    DEFAULT_WEIGHT_FLOOR,
    FEAS_TOL,
    InfeasiblePointError,
    LinearEquality,
    ProblemSpec,
    SingularSystemError,
    ZeroLoss,
    compute_weights,
    magnitudes,
    objective_J,
    objective_J0,
    sparsity,
    surrogate_value,
)
from airopt.penalties import Mode, PenaltyKind, r_prime_at_zero_limit, r_sup, framed_value, weight
from airopt.solvers import SolverOptions, SubproblemSpec, solve_subproblem, stationarity_distance

log = logging.getLogger(__name__)

TRACE_HEADER = ("k", "J", "J0", "delta_G", "eps", "w_min", "w_max",
                "sparsity", "inner_iters", "kkt_residual")


class DescentViolation(AssertionError):
    """The relaxed objective increased between outer iterations."""


class Status(str, enum.Enum):
    CONVERGED_OBJECTIVE = "ConvergedObjective"
    CONVERGED_RESIDUAL = "ConvergedResidual"
    MAX_ITERATIONS = "MaxIterations"
    GUARD_REJECTED = "GuardRejected"
    SUBPROBLEM_FAILURE = "SubproblemFailure"

    @property
    def converged(self):
        return self in (Status.CONVERGED_OBJECTIVE, Status.CONVERGED_RESIDUAL)


@dataclass(frozen=True)
class AirConfig:
    eps0: float = 1.0
    eps_decay: float = 0.7
    eps_floor: float = 1e-6
    outer_tol: float = 1e-5
    max_outer_iter: int = 500
    weight_floor: float = DEFAULT_WEIGHT_FLOOR
    solver_opts: SolverOptions = field(default_factory=SolverOptions)
    assert_descent: bool = True
    strict_guard: bool = False
    sparsity_threshold: float = 1e-3

    def __post_init__(self):
        if not (self.eps0 >= 0 and math.isfinite(self.eps0)):
            raise ValueError("eps0 must be finite and nonnegative")
        if not (0 < self.eps_decay <= 1):
            raise ValueError("eps_decay must lie in (0, 1]")
        if not (0 <= self.eps_floor <= self.eps0):
            raise ValueError("eps_floor must satisfy 0 <= eps_floor <= eps0")
        if not self.outer_tol > 0:
            raise ValueError("outer_tol must be positive")
        if int(self.max_outer_iter) < 1:
            raise ValueError("max_outer_iter must be a positive integer")
        if not self.weight_floor > 0:
            raise ValueError("weight_floor must be positive")


@dataclass(frozen=True)
class IterationRecord:
    k: int
    J: float
    J0: float
    delta_G: float
    eps: float
    weights_minmax: tuple
    sparsity: int
    inner_iterations: int
    kkt_residual: float


@dataclass
class SolveReport:
    x_final: np.ndarray
    status: Status
    trace: list
    optimality_residual_final: float
    message: str = ""

    @property
    def outer_iterations(self):
        return max(len(self.trace) - 1, 0)


class GuardStatus(str, enum.Enum):
    PASS = "pass"
    WARN = "warn"
    FAIL = "fail"


@dataclass(frozen=True)
class GuardResult:
    status: GuardStatus
    message: str


# --------------------------------------------------------------------------


def update_epsilon(eps, config: AirConfig):
    """``eps <- max(decay * eps, floor)``; never increases."""
    eps = np.asarray(eps, dtype=float)
    out = np.maximum(config.eps_decay * eps, config.eps_floor)
    return np.minimum(out, eps)


def optimality_residual(problem: ProblemSpec, x, eps):
    """Distance from 0 to the Frechet stationarity set of ``J(.; eps)`` at ``x``.

    Per group, with ``t = c_i(x_i) + eps_i``:

    * ``t > 0``: the slope ``phi'(t)`` times the subdifferential of ``c_i``;
    * ``t = 0`` and ``r'(0+)`` finite: a ball of radius ``r'(0+)``;
    * ``t = 0`` and ``r'(0+)`` infinite: no restriction on the block.
    """
    x = problem.check_dim(x)
    eps = problem.eps_vector(eps)
    con = problem.constraint
    viol = con.violation(x)
    if viol > FEAS_TOL * (1 + np.linalg.norm(x)):
        raise InfeasiblePointError(f"point violates the constraint by {viol:.3e}", viol)
    groups = problem.groups
    pen = problem.penalty
    g = np.zeros(problem.n) if isinstance(problem.loss, ZeroLoss) else problem.loss.grad(x)
    norms = groups.norms(x)
    radius = np.zeros(problem.m)
    dead = (norms == 0) & (eps == 0)
    ystar = r_prime_at_zero_limit(pen)
    radius[dead] = ystar
    live = ~dead
    if problem.mode is Mode.SQUARE:
        t = norms[live] ** 2 + eps[live]
        coef = np.zeros(problem.m)
        coef[live] = 2.0 * weight(pen, Mode.SQUARE, t, 0.0)
        g = g + groups.expand(coef) * x
    else:
        nz = live & (norms > 0)
        slopes = np.zeros(problem.m)
        if np.any(live):
            slopes[live] = weight(pen, Mode.ABS, norms[live], eps[live])
        scale = np.zeros(problem.m)
        scale[nz] = slopes[nz] / norms[nz]
        g = g + groups.expand(scale) * x
        at_zero = live & (norms == 0)
        radius[at_zero] = slopes[at_zero]
    return stationarity_distance(g, radius, groups, con, x)


def level_set_guard(problem: ProblemSpec, x0, eps0, *, strict=False) -> GuardResult:
    """Sufficient conditions for a bounded level set of the unrelaxed objective."""
    con = problem.constraint
    if con.is_bounded():
        return GuardResult(GuardStatus.PASS, f"feasible set {con!r} is bounded")
    if problem.loss.coercive():
        return GuardResult(GuardStatus.PASS, "smooth loss is coercive")
    gammas = r_sup(problem.penalty)
    if math.isinf(gammas):
        return GuardResult(GuardStatus.PASS,
                           f"penalty {problem.penalty} is unbounded, so the penalty term is coercive")
    x0 = problem.check_dim(x0)
    eps0 = problem.eps_vector(eps0)
    fbar = problem.loss.lower_bound
    bad = GuardStatus.FAIL if strict else GuardStatus.WARN
    if fbar is None:
        return GuardResult(bad, "no lower bound for the loss; boundedness not certified")
    c = magnitudes(problem.mode, problem.groups, x0)
    lhs = float(np.sum(framed_value(problem.penalty, problem.mode, c + eps0)))
    rhs = fbar + gammas
    if lhs <= rhs:
        return GuardResult(GuardStatus.PASS,
                           f"initial penalty {lhs:.6g} <= lower bound + plateau {rhs:.6g}")
    return GuardResult(bad, f"initial penalty {lhs:.6g} exceeds lower bound + plateau {rhs:.6g}; "
                            "iterates may be unbounded")


def delta_G(problem: ProblemSpec, x_prev, x_next, eps, weight_floor=DEFAULT_WEIGHT_FLOOR):
    """Model reduction ``G(x_prev) - G(x_next)`` with weights frozen at ``x_prev``."""
    w = compute_weights(problem, x_prev, eps, weight_floor)
    return _model_reduction(problem, w, x_prev, x_next)


def available_reduction(problem: ProblemSpec, x, eps, config: AirConfig = AirConfig()):
    """Model reduction one more outer iteration would achieve from ``(x, eps)``.

    Zero exactly when ``x`` already minimizes its own surrogate, i.e. when
    ``x`` is stationary for ``J(.; eps)``; this is the quantity that must
    vanish at convergence, whereas the last recorded step may be large when
    the loop stops on the residual test.
    """
    x = problem.check_dim(x)
    w = compute_weights(problem, x, eps, config.weight_floor)
    spec = SubproblemSpec(problem.loss, w, problem.mode, problem.groups, problem.constraint)
    sol = solve_subproblem(spec, config.solver_opts, x0=x)
    return _model_reduction(problem, w, x, sol.x)


def _model_reduction(problem, w, x_prev, x_next):
    def G(x):
        return problem.loss.value(x) + float(w @ magnitudes(problem.mode, problem.groups, x))
    return G(np.asarray(x_prev, dtype=float)) - G(np.asarray(x_next, dtype=float))


# --------------------------------------------------------------------------


def _default_start(problem):
    try:
        return problem.constraint.project(np.zeros(problem.n))
    except SingularSystemError:
        con = problem.constraint
        return np.linalg.lstsq(con.A, con.b, rcond=None)[0]


def air_solve(problem: ProblemSpec, x0=None, config: AirConfig = AirConfig()) -> SolveReport:
    """Run the reweighted outer loop from ``x0`` (default: projection of 0)."""
    x = _default_start(problem) if x0 is None else problem.constraint.project(problem.check_dim(x0))
    eps = problem.eps_vector(config.eps0)
    pen = problem.penalty
    if np.any(eps == 0) and not math.isfinite(
            r_prime_at_zero_limit(pen) if problem.mode is Mode.ABS else math.inf):
        raise ValueError(f"eps0 = 0 requires a finite slope at zero; {pen} in "
                         f"{problem.mode.value} framing has an infinite one")

    guard = level_set_guard(problem, x, eps, strict=config.strict_guard)
    if guard.status is GuardStatus.FAIL:
        return SolveReport(x, Status.GUARD_REJECTED, [], math.nan, guard.message)
    if guard.status is GuardStatus.WARN:
        log.warning("level-set guard: %s", guard.message)

    J_prev = objective_J(problem, x, eps)
    J0_prev = objective_J0(problem, x)
    trace = [IterationRecord(0, J_prev, J0_prev, 0.0, float(eps.max()), (math.nan, math.nan),
                             sparsity(problem, x, config.sparsity_threshold), 0, math.nan)]
    opts = config.solver_opts
    state = None
    failures = 0
    status = Status.MAX_ITERATIONS
    resid = math.nan
    message = ""
    for k in range(1, config.max_outer_iter + 1):
        w = compute_weights(problem, x, eps, config.weight_floor)
        spec = SubproblemSpec(problem.loss, w, problem.mode, problem.groups, problem.constraint)
        sol = solve_subproblem(spec, opts, x0=x, state=state)
        state = sol.state
        failures = 0 if sol.converged else failures + 1
        x_new = sol.x
        tol_scale = 1.0 if sol.converged else 0.0
        G_prev = surrogate_value(problem.loss, problem.mode, problem.groups,
                                 problem.constraint, w, x, tol_scale=1.0)
        G_new = surrogate_value(problem.loss, problem.mode, problem.groups,
                                problem.constraint, w, x_new)
        if not (G_new <= G_prev) and not sol.converged:
            # inexact solve that does not improve the model: stay put
            x_new, G_new = x, G_prev
        dG = G_prev - G_new
        eps_new = update_epsilon(eps, config)
        J_new = objective_J(problem, x_new, eps_new)
        if config.assert_descent and J_new > J_prev + 1e-8 * (1 + abs(J_prev)):
            raise DescentViolation(
                f"outer iteration {k}: J increased from {J_prev!r} to {J_new!r} "
                f"(model reduction {dG!r}, subproblem residual {sol.kkt_residual:.3e}, "
                f"converged={sol.converged})")
        J0_new = objective_J0(problem, x_new)
        try:
            resid = optimality_residual(problem, x_new, eps_new)
        except InfeasiblePointError:
            resid = math.inf
        trace.append(IterationRecord(
            k, J_new, J0_new, dG, float(eps_new.max()), (float(w.min()), float(w.max())),
            sparsity(problem, x_new, config.sparsity_threshold), sol.inner_iterations,
            sol.kkt_residual))
        x, eps, J_prev = x_new, eps_new, J_new
        if failures >= 2:
            status = Status.SUBPROBLEM_FAILURE
            message = f"subproblem solver did not converge at iterations {k - 1} and {k}"
            break
        if abs(J0_new - J0_prev) <= config.outer_tol:
            status = Status.CONVERGED_OBJECTIVE
            break
        if resid <= config.outer_tol:
            status = Status.CONVERGED_RESIDUAL
            break
        J0_prev = J0_new
    return SolveReport(x, status, trace, resid, message)


# --------------------------------------------------------------------------


def trace_rows(trace):
    for rec in trace:
        yield (rec.k, repr(rec.J), repr(rec.J0), repr(rec.delta_G), repr(rec.eps),
               repr(rec.weights_minmax[0]), repr(rec.weights_minmax[1]), rec.sparsity,
               rec.inner_iterations, repr(rec.kkt_residual))


def trace_to_csv(trace) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(TRACE_HEADER)
    wr.writerows(trace_rows(trace))
    return buf.getvalue()


def write_trace_csv(trace, path):
    with open(path, "w", newline="") as fh:
        fh.write(trace_to_csv(trace))
