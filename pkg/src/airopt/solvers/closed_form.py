from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from airopt.model import GroupStructure, LinearEquality, SingularSystemError, ZeroLoss
from airopt.penalties import Mode
from airopt.solvers.base import SubproblemSolution, SubproblemSpec, kkt_residual


def _min_weighted_norm(A, b, wexp):
    """``argmin sum_j wexp_j x_j^2  s.t.  A x = b`` via column scaling."""
    s = 1.0 / np.sqrt(wexp)
    As = A * s
    G = As @ As.T
    try:
        c = sla.cho_factor(G, lower=True, check_finite=False)
        y = sla.cho_solve(c, b, check_finite=False)
        # one step of refinement; G can be poorly conditioned for skewed weights
        y += sla.cho_solve(c, b - G @ y, check_finite=False)
    except np.linalg.LinAlgError:
        if np.linalg.matrix_rank(A) < A.shape[0]:
            raise SingularSystemError("A D A^T is singular (A is rank deficient)") from None
        y = np.linalg.lstsq(G, b, rcond=None)[0]
    return s * (As.T @ y)


def _quadratic_equality(H, h, A, b, dexp):
    """Solve ``(H + 2 diag(d)) x + A^T lam = h``, ``A x = b``."""
    n, q = H.shape[0], A.shape[0]
    K = np.zeros((n + q, n + q))
    K[:n, :n] = H + np.diag(2.0 * dexp)
    K[:n, n:] = A.T
    K[n:, :n] = A
    rhs = np.concatenate([h, b])
    try:
        sol = sla.solve(K, rhs, assume_a="sym", check_finite=False)
    except np.linalg.LinAlgError:
        raise SingularSystemError("KKT matrix of the weighted l2 subproblem is singular") from None
    return sol[:n]


def solve_weighted_l2_equality(A, b, weights, groups: GroupStructure, *, loss=None,
                               constraint=None):
    """Minimizer of ``f(x) + sum_i w_i ||x_i||^2`` subject to ``A x = b``.

    With zero loss this is ``x = D A^T (A D A^T)^{-1} b`` where ``D`` is
    block diagonal with ``1/w_i`` on the coordinates of group ``i``.
    """
    constraint = constraint if constraint is not None else LinearEquality(A, b)
    A, b = constraint.A, constraint.b
    if not constraint.full_row_rank:
        raise SingularSystemError(f"A has rank {constraint.rank} < {A.shape[0]} rows")
    loss = loss if loss is not None else ZeroLoss(A.shape[1])
    wexp = groups.expand(weights)
    if isinstance(loss, ZeroLoss):
        x = _min_weighted_norm(A, b, wexp)
    else:
        x = _quadratic_equality(loss.hessian(A.shape[1]), loss.linear(A.shape[1]), A, b, wexp)
    spec = SubproblemSpec(loss, weights, Mode.SQUARE, groups, constraint)
    res = kkt_residual(spec, x)
    return SubproblemSolution(x=x, objective=spec.objective(x), kkt_residual=res,
                              inner_iterations=1, converged=True)
