"""ADMM for weighted (group) l1 minimization under linear equality constraints.

Splitting: ``min f(x) + sum_i w_i ||z_i||`` s.t. ``A x = b``, ``x = z``.
The x-update is an equality-constrained quadratic solve, the z-update a
block soft-threshold.  The penalty parameter follows residual balancing.

For singleton groups the solver periodically attempts a *polish*: fix the
support and signs of ``z``, solve the resulting linear KKT system, and
accept the point if it satisfies the full optimality conditions.  This
returns vertex solutions exactly instead of to ADMM accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from airopt.model import FEAS_TOL, GroupStructure, LinearEquality, SingularSystemError, ZeroLoss
from airopt.penalties import Mode
from airopt.solvers.base import SolverOptions, SubproblemSolution, SubproblemSpec, kkt_residual
from airopt.solvers.crossover import independent_columns, simplex_crossover
from airopt.solvers.prox import block_soft_threshold

POLISH_EVERY = 10
CERTIFY_EVERY = 50  # direct optimality test when polishing does not apply
CROSSOVER_AFTER = 200  # iterations before falling back to simplex pivots
_MU = 10.0  # residual ratio that triggers a rho update
_TAU = 2.0
_ZERO_TOL = 1e-9  # relative size below which a polished entry counts as zero


class InfeasibleEqualityError(ValueError):
    """``b`` is not in the range of ``A``."""

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


@dataclass
class AdmmState:
    u: np.ndarray
    rho: float
    multiplier: np.ndarray | None = None


class _XUpdate:
    """``argmin f(x) + rho/2 ||x - v||^2  s.t.  A x = b`` for a fixed ``rho``."""

    def __init__(self, loss, con: LinearEquality):
        self.con = con
        self.zero = isinstance(loss, ZeroLoss)
        if not self.zero:
            n = con.n
            self.H = loss.hessian(n)
            self.h = loss.linear(n)
        self.rho = None

    def set_rho(self, rho):
        if self.zero or rho == self.rho:
            self.rho = rho
            return
        A = self.con.A
        K = self.H + rho * np.eye(self.H.shape[0])
        self.Kc = sla.cho_factor(K, lower=True, check_finite=False)
        KiAt = sla.cho_solve(self.Kc, A.T, check_finite=False)
        self.Sc = sla.cho_factor(A @ KiAt, lower=True, check_finite=False)
        self.KiAt = KiAt
        self.rho = rho

    def __call__(self, v):
        if self.zero:
            return self.con.project(v)
        y = sla.cho_solve(self.Kc, self.h + self.rho * v, check_finite=False)
        lam = sla.cho_solve(self.Sc, self.con.A @ y - self.con.b, check_finite=False)
        return y - self.KiAt @ lam


def _candidate_support(z, y, w, q, fill):
    """Support of ``z``, optionally completed to ``q`` indices by the dual estimate.

    Coordinates whose subgradient estimate ``|y_j|`` is closest to its bound
    ``w_j`` are the ones most likely to be basic at a vertex solution.
    """
    S = np.flatnonzero(z)
    sig = np.sign(z[S])
    if fill and S.size < q:
        ratio = np.abs(y) / w
        ratio[S] = -np.inf
        extra = np.argpartition(-ratio, q - S.size - 1)[:q - S.size]
        extra = extra[ratio[extra] > 0]
        S = np.concatenate([S, extra])
        sig = np.concatenate([sig, np.sign(y[extra])])
        order = np.argsort(S)
        S, sig = S[order], sig[order]
    return S, sig


def _support_solve(spec, S, sig, zero_loss):
    """Stationary point of the subproblem restricted to support ``S`` with signs ``sig``."""
    A, b = spec.constraint.A, spec.constraint.b
    AS = A[:, S]
    if zero_loss:
        return np.linalg.lstsq(AS, b, rcond=None)[0]
    q, k = A.shape[0], S.size
    H = spec.loss.hessian(spec.n)
    h = spec.loss.linear(spec.n)
    wS = spec.weights[spec.groups.labels[S]]
    K = np.zeros((k + q, k + q))
    K[:k, :k] = H[np.ix_(S, S)]
    K[:k, k:] = AS.T
    K[k:, :k] = AS
    rhs = np.concatenate([h[S] - wS * sig, b])
    return np.linalg.lstsq(K, rhs, rcond=None)[0][:k]


def _polish(spec: SubproblemSpec, S, sig, y, opts):
    """Try to certify an exact minimizer with support inside ``S`` and signs ``sig``.

    ``y`` is the ADMM estimate of the subgradient term; when the support is
    smaller than the number of constraints the multiplier is not unique and
    ``y`` selects the one closest to the ADMM dual.
    """
    con = spec.constraint
    A, b = con.A, con.b
    q = A.shape[0]
    w = spec.weights
    groups = spec.groups
    wS = w[groups.labels[S]]
    zero_loss = isinstance(spec.loss, ZeroLoss)
    if zero_loss and S.size > q:
        return None
    xS = _support_solve(spec, S, sig, zero_loss)
    # entries the linear solve sends to (numerical) zero leave the support;
    # re-solving on the smaller set removes the rounding left in them
    small = np.abs(xS) <= _ZERO_TOL * (1 + np.abs(xS).max(initial=0.0))
    if np.any(small):
        S, sig = S[~small], sig[~small]
        xS = _support_solve(spec, S, sig, zero_loss)
    if np.any(sig * xS <= 0):
        return None
    x = np.zeros(spec.n)
    x[S] = xS
    if np.linalg.norm(A @ x - b) > FEAS_TOL * (1 + np.linalg.norm(b)):
        return None
    g = np.zeros(spec.n) if zero_loss else spec.loss.grad(x)
    wexp = groups.expand(w)
    on = np.flatnonzero(x)
    # multiplier: closest to the ADMM dual, then corrected to match the support exactly
    lam = np.linalg.lstsq(A.T, -(g + y), rcond=None)[0]
    if on.size:
        target = -wexp[on] * np.sign(x[on]) - g[on] - A[:, on].T @ lam
        lam = lam + np.linalg.lstsq(A[:, on].T, target, rcond=None)[0]
    v = g + A.T @ lam
    stat = np.maximum(np.abs(v) - wexp, 0.0)
    stat[on] = np.abs(v[on] + wexp[on] * np.sign(x[on]))
    bound = float(np.linalg.norm(stat))
    scale = 1.0 + float(wS.max(initial=0.0))
    if bound > opts.dual_tol * scale:
        return None
    return x, lam


def _crossover(con, wexp, z, y, opts):
    """Finish with simplex pivots from the basis suggested by ``z`` and ``y``."""
    A, b = con.A, con.b
    nz = np.flatnonzero(z)
    rest = np.setdiff1d(np.arange(A.shape[1]), nz)
    order = np.concatenate([nz[np.argsort(-np.abs(z[nz]), kind="stable")],
                            rest[np.argsort(-np.abs(y[rest]) / wexp[rest], kind="stable")]])
    basis = independent_columns(A, order)
    hint = np.where(z != 0, np.sign(z), np.sign(y))
    out = simplex_crossover(A, b, wexp, basis, hint, dual_tol=min(opts.dual_tol, 1e-9))
    if out is None:
        return None
    x, lam, _ = out
    if np.linalg.norm(A @ x - b) > FEAS_TOL * (1 + np.linalg.norm(b)):
        return None
    return x, lam


def _certified(spec, x, thr, tol):
    if spec.constraint.violation(x) > FEAS_TOL * (1 + np.linalg.norm(x)):
        return False
    return kkt_residual(spec, x) <= tol * (1 + float(thr.max()))


def _restore_feasibility(con, groups, z):
    """Closest point to ``z`` on ``{A x = b}`` with the zero blocks of ``z`` kept at zero."""
    A, b = con.A, con.b
    on = groups.expand(groups.norms(z) > 0).astype(bool)
    if np.any(on):
        AS = A[:, on]
        x = np.zeros_like(z)
        x[on] = z[on] + np.linalg.lstsq(AS, b - AS @ z[on], rcond=None)[0]
        if np.linalg.norm(A @ x - b) <= FEAS_TOL * (1 + np.linalg.norm(b)):
            return x
    return con.project(z)


def solve_weighted_l1_equality(A, b, weights, groups: GroupStructure,
                               opts: SolverOptions = SolverOptions(), *, loss=None,
                               constraint=None, x0=None, state: AdmmState | None = None):
    """Minimize ``f(x) + sum_i w_i ||x_i||_2`` subject to ``A x = b``.

    Returns a :class:`SubproblemSolution` whose ``state`` holds the scaled
    dual variable and penalty parameter for warm starts.  When the iteration
    cap is hit the best available iterate is returned with
    ``converged=False``.
    """
    con = constraint if constraint is not None else LinearEquality(A, b)
    loss = loss if loss is not None else ZeroLoss(con.n)
    spec = SubproblemSpec(loss, weights, Mode.ABS, groups, con)
    n = con.n
    try:
        ls = con.project(np.zeros(n))
    except SingularSystemError:
        ls = np.linalg.lstsq(con.A, con.b, rcond=None)[0]
    infeas = np.linalg.norm(con.A @ ls - con.b)
    if infeas > 1e-9 * (1 + np.linalg.norm(con.b)):
        raise InfeasibleEqualityError(
            f"b is not in the range of A (least-squares residual {infeas:.3e})", infeas)

    thr = np.asarray(weights, dtype=float)
    xupd = _XUpdate(loss, con)
    if state is not None:
        u, rho = state.u.copy(), state.rho
        warm_lam = state.multiplier
    else:
        u, rho, warm_lam = np.zeros(n), opts.admm_rho, None
    z = con.project(np.zeros(n) if x0 is None else np.asarray(x0, dtype=float))
    xupd.set_rho(rho)
    sqn = np.sqrt(n)
    tol_p, tol_d = opts.primal_tol, opts.dual_tol
    converged = False
    x = z
    polish_ok = groups.singleton
    q = con.A.shape[0]
    lp_case = isinstance(loss, ZeroLoss)
    last_support = None
    k = 0
    for k in range(1, opts.max_inner_iter + 1):
        x = xupd(z - u)
        z_old = z
        z = block_soft_threshold(x + u, thr / rho, groups)
        u = u + x - z
        r = np.linalg.norm(x - z)
        s = rho * np.linalg.norm(z - z_old)
        eps_pri = sqn * tol_p + tol_p * max(np.linalg.norm(x), np.linalg.norm(z))
        eps_dual = sqn * tol_d + tol_d * rho * np.linalg.norm(u)
        done = r <= eps_pri and s <= eps_dual
        if polish_ok and (done or k % POLISH_EVERY == 0):
            y = rho * u
            support, sig = _candidate_support(z, y, thr[groups.labels], q, lp_case)
            pol = None
            if done or last_support is None or not np.array_equal(support, last_support):
                last_support = support
                pol = _polish(spec, support, sig, y, opts)
            if pol is None and lp_case and (done or k == CROSSOVER_AFTER):
                pol = _crossover(con, thr[groups.labels], z, y, opts)
            if pol is not None:
                xp, lam = pol
                res = kkt_residual(spec, xp, warm_multiplier=lam)
                return SubproblemSolution(
                    x=xp, objective=spec.objective(xp), kkt_residual=res,
                    inner_iterations=k, converged=True,
                    state=AdmmState(u=u, rho=rho, multiplier=lam))
        if not polish_ok and (done or k % CERTIFY_EVERY == 0):
            cand = _restore_feasibility(con, groups, z)
            if _certified(spec, cand, thr, tol_d):
                res, lam = kkt_residual(spec, cand, warm_multiplier=warm_lam,
                                        return_multiplier=True)
                return SubproblemSolution(
                    x=cand, objective=spec.objective(cand), kkt_residual=res,
                    inner_iterations=k, converged=True,
                    state=AdmmState(u=u, rho=rho, multiplier=lam))
        if done:
            converged = True
            break
        if r > _MU * s:
            rho *= _TAU
            u /= _TAU
            xupd.set_rho(rho)
        elif s > _MU * r:
            rho /= _TAU
            u *= _TAU
            xupd.set_rho(rho)

    if polish_ok and lp_case and not done:
        pol = _crossover(con, thr[groups.labels], z, rho * u, opts)
        if pol is not None:
            xp, lam = pol
            res = kkt_residual(spec, xp, warm_multiplier=lam)
            return SubproblemSolution(x=xp, objective=spec.objective(xp), kkt_residual=res,
                                      inner_iterations=k, converged=True,
                                      state=AdmmState(u=u, rho=rho, multiplier=lam))
    # no certificate: z is sparse but only approximately feasible, so move it
    # onto the affine set while keeping its zero blocks whenever possible
    out = _restore_feasibility(con, groups, z)
    if con.violation(out) > FEAS_TOL * (1 + np.linalg.norm(out)):
        out = x
        converged = False
    res, lam = kkt_residual(spec, out, warm_multiplier=warm_lam, return_multiplier=True)
    converged = converged or res <= tol_d * (1 + float(thr.max()))
    return SubproblemSolution(x=out, objective=spec.objective(out), kkt_residual=res,
                              inner_iterations=k, converged=converged,
                              state=AdmmState(u=u, rho=rho, multiplier=lam))
