"""Simplex crossover for weighted l1 minimization under equality constraints.

``min sum_j w_j |x_j|  s.t.  A x = b`` is a linear program in the split
variables ``x = x+ - x-``.  Any nonsingular column basis ``B`` of ``A``
gives a feasible basic solution once each basic variable is assigned the
sign of ``(A_B^{-1} b)_j``, so primal simplex can start from a basis guessed
by a first-order method and usually finishes in a handful of pivots.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla

_PIVOT_TOL = 1e-10
_INDEP_TOL = 1e-8


def independent_columns(A, order):
    """Greedily pick linearly independent columns of ``A`` in the given priority order."""
    q = A.shape[0]
    Q = np.zeros((q, 0))
    chosen = []
    for j in order:
        a = A[:, j]
        r = a - Q @ (Q.T @ a)
        r -= Q @ (Q.T @ r)
        nr = np.linalg.norm(r)
        if nr > _INDEP_TOL * (1 + np.linalg.norm(a)):
            Q = np.column_stack([Q, r / nr])
            chosen.append(int(j))
            if len(chosen) == q:
                break
    return np.array(chosen, dtype=int)


def simplex_crossover(A, b, w, basis, sign_hint=None, *, max_pivots=None, dual_tol=1e-9):
    """Primal simplex from ``basis`` (``q`` column indices of ``A``).

    Returns ``(x, lam, pivots)`` with ``lam`` the multiplier in
    ``w * sign(x) + A^T lam = 0`` on the support, or ``None`` if the basis
    is singular or the pivot budget runs out.
    """
    q, n = A.shape
    B = np.asarray(basis, dtype=int).copy()
    if B.size != q:
        return None
    hint = np.ones(n) if sign_hint is None else np.where(sign_hint < 0, -1.0, 1.0)
    max_pivots = max_pivots if max_pivots is not None else 20 * q + 100
    in_basis = np.zeros(n, dtype=bool)
    in_basis[B] = True
    bland = False
    degenerate_run = 0
    for pivots in range(max_pivots + 1):
        try:
            lu = sla.lu_factor(A[:, B], check_finite=False)
        except (ValueError, np.linalg.LinAlgError):
            return None
        if np.any(np.abs(np.diag(lu[0])) < 1e-14 * (1 + np.abs(lu[0]).max())):
            return None
        xB = sla.lu_solve(lu, b, check_finite=False)
        scale = 1 + np.abs(xB).max()
        sig = np.where(np.abs(xB) <= 1e-13 * scale, hint[B], np.sign(xB))
        # duals of the split LP: A_B^T pi = w_B * sig
        pi = sla.lu_solve(lu, w[B] * sig, trans=1, check_finite=False)
        corr = A.T @ pi
        viol = np.abs(corr) - w
        viol[in_basis] = -np.inf
        rel = viol / (1 + w)
        if rel.max() <= dual_tol:
            x = np.zeros(n)
            x[B] = np.where(np.abs(xB) <= 1e-13 * scale, 0.0, xB)
            return x, -pi, pivots
        if pivots == max_pivots:
            return None
        cand = np.flatnonzero(rel > dual_tol)
        j = int(cand[0]) if bland else int(cand[np.argmax(rel[cand])])
        dirn = np.sign(corr[j])
        # moving x_j by t * dirn changes the basic values by -t * dirn * A_B^{-1} a_j
        d = dirn * sla.lu_solve(lu, A[:, j], check_finite=False)
        t_vals = sig * xB
        rate = sig * d
        mask = rate > _PIVOT_TOL
        if not np.any(mask):
            return None  # unbounded direction: impossible for a weighted norm objective
        ratios = np.full(q, np.inf)
        ratios[mask] = np.maximum(t_vals[mask], 0.0) / rate[mask]
        step = ratios.min()
        ties = np.flatnonzero(ratios <= step + 1e-12 * (1 + step))
        leave = int(ties[np.argmin(B[ties])]) if bland else int(ties[np.argmax(rate[ties])])
        degenerate_run = degenerate_run + 1 if step <= 1e-12 * scale else 0
        bland = bland or degenerate_run > q
        in_basis[B[leave]] = False
        B[leave] = j
        in_basis[j] = True
        hint[j] = dirn
    return None
