"""Distance from the origin to a stationarity set.

All first-order conditions in this package have the form

    0 in g + S_1 x ... x S_m + N(x | X)

where ``g`` collects the smooth parts, ``S_i`` is a Euclidean ball of radius
``radius[i]`` in the coordinates of group ``i`` (radius 0 is the point
``{0}``, radius ``inf`` the whole block space) and ``N(x | X)`` is the
normal cone of the constraint set.  :func:`stationarity_distance` returns
``dist(0, g + S + N)`` exactly for every supported constraint variant.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.linalg as sla

from airopt.model import (
    Box,
    ConstraintSet,
    Free,
    GroupStructure,
    L2Ball,
    LinearEquality,
    NonNegative,
)

_ACTIVE_TOL = 1e-10


def _cone_intervals(constraint, x):
    """Per-coordinate normal cone ``[klo, khi]`` of a separable set at ``x``."""
    n = x.size
    klo = np.zeros(n)
    khi = np.zeros(n)
    if isinstance(constraint, Free):
        return klo, khi
    lo, hi = constraint.bounds(n)
    with np.errstate(invalid="ignore"):  # infinite bounds are never active
        at_lo = np.isfinite(lo) & (x <= lo + _ACTIVE_TOL * (1 + np.abs(lo)))
        at_hi = np.isfinite(hi) & (x >= hi - _ACTIVE_TOL * (1 + np.abs(hi)))
    klo[at_lo] = -np.inf
    khi[at_hi] = np.inf
    return klo, khi


def _block_excess(v, radius, groups):
    """Per-group ``max(||v_i|| - radius_i, 0)`` (zero when radius is inf)."""
    norms = groups.norms(v)
    with np.errstate(invalid="ignore"):
        exc = np.where(np.isinf(radius), 0.0, np.maximum(norms - radius, 0.0))
    return exc, norms


def _separable_distance(g, radius, groups, constraint, x):
    klo, khi = _cone_intervals(constraint, x)
    t = -g
    # distance of -g_j to the cone interval, then the block ball absorbs radius_i
    comp = np.maximum(klo - t, 0.0) + np.maximum(t - khi, 0.0)
    exc, _ = _block_excess(comp, radius, groups)
    return float(np.linalg.norm(exc))


class _Merit:
    """``F(lam) = 0.5 * sum_i max(||g_i + (V lam)_i|| - r_i, 0)^2``."""

    def __init__(self, g, V, radius, groups):
        self.g, self.V, self.radius, self.groups = g, V, radius, groups
        self.finite = ~np.isinf(radius)
        self.rexp = groups.expand(np.where(self.finite, radius, 0.0))
        self.fexp = groups.expand(self.finite.astype(float)) > 0

    def residual_vector(self, lam):
        v = self.g + self.V @ lam
        norms = self.groups.norms(v)
        nexp = self.groups.expand(norms)
        with np.errstate(divide="ignore", invalid="ignore"):
            shrink = np.where(nexp > self.rexp, 1.0 - self.rexp / nexp, 0.0)
        shrink[~self.fexp] = 0.0
        return v * shrink, v, nexp

    def value(self, lam):
        e, *_ = self.residual_vector(lam)
        return 0.5 * float(e @ e)

    def newton_system(self, lam):
        e, v, nexp = self.residual_vector(lam)
        grad = self.V.T @ e
        active = self.fexp & (nexp > self.rexp)
        V = self.V
        if self.groups.singleton:
            Va = V[active]
            Hm = Va.T @ Va
        else:
            # D_i = I - (r_i/||v_i||)(I - u u^T) on active groups
            with np.errstate(divide="ignore", invalid="ignore"):
                alpha = np.where(active, 1.0 - self.rexp / nexp, 0.0)
            Hm = (V * alpha[:, None]).T @ V
            with np.errstate(divide="ignore", invalid="ignore"):
                beta = np.where(active, self.rexp / nexp, 0.0)
            if np.any(beta):
                with np.errstate(divide="ignore", invalid="ignore"):
                    u = np.where(active, v / nexp, 0.0)
                # add sum_i beta_i (V_i^T u_i)(V_i^T u_i)^T
                P = V * u[:, None]
                for i in np.flatnonzero(self.finite):
                    blk = self.groups.blocks[i]
                    if not active[blk[0]]:
                        continue
                    a = P[blk].sum(axis=0)
                    Hm += beta[blk[0]] * np.outer(a, a)
        return 0.5 * float(e @ e), grad, Hm


def _minimize_merit(merit: _Merit, lam0, lam_lower=None, max_iter=200):
    """Semismooth Newton with backtracking on the convex C^1 merit function."""
    lam = lam0.copy()
    k = lam.size
    fval, grad, Hm = merit.newton_system(lam)
    scale = 1.0 + float(np.abs(merit.g).max(initial=0.0))
    for _ in range(max_iter):
        if fval == 0.0 or np.linalg.norm(grad) <= 1e-15 * scale * scale:
            break
        mu = 1e-12 * (1.0 + np.trace(Hm) / max(k, 1))
        try:
            d = -sla.solve(Hm + mu * np.eye(k), grad, assume_a="pos")
        except (np.linalg.LinAlgError, ValueError):
            d = -np.linalg.lstsq(Hm + mu * np.eye(k), grad, rcond=None)[0]
        step = 1.0
        slope = float(grad @ d)
        if slope >= 0:
            d = -grad
            slope = -float(grad @ grad)
            step = 1.0 / (1.0 + np.linalg.norm(Hm, 2))
        improved = False
        for _ in range(60):
            cand = lam + step * d
            if lam_lower is not None:
                cand = np.maximum(cand, lam_lower)
            fc = merit.value(cand)
            if fc <= fval + 1e-4 * step * slope or fc < fval * (1 - 1e-12):
                improved = True
                break
            step *= 0.5
        if not improved:
            break
        lam = cand
        fnew, grad, Hm = merit.newton_system(lam)
        if fval - fnew <= 1e-16 * max(fval, 1e-300) and fnew > 0:
            fval = fnew
            break
        fval = fnew
    return fval, lam


def _initial_multiplier(g, V, radius, groups):
    point = groups.expand((radius == 0).astype(float)) > 0
    if not np.any(point):
        return np.zeros(V.shape[1])
    lam, *_ = np.linalg.lstsq(V[point], -g[point], rcond=None)
    return lam


def _equality_distance(g, radius, groups, constraint: LinearEquality, warm=None):
    V = constraint.A.T
    if constraint.full_row_rank and not np.any(radius):
        # every block is pinned: the distance is the part of g outside range(A^T)
        Q, R = constraint._factors()
        coef = Q.T @ g
        lam = -sla.solve_triangular(R, coef)
        return float(np.linalg.norm(g - Q @ coef)), lam
    merit = _Merit(g, V, radius, groups)
    lam0 = warm if warm is not None and warm.shape == (V.shape[1],) else \
        _initial_multiplier(g, V, radius, groups)
    fval, lam = _minimize_merit(merit, lam0)
    return math.sqrt(2 * max(fval, 0.0)), lam


def _ball_distance(g, radius, groups, constraint: L2Ball, x):
    d = x - constraint.center
    nd = float(np.linalg.norm(d))
    if nd < constraint.radius * (1 - _ACTIVE_TOL):
        exc, _ = _block_excess(g, radius, groups)
        return float(np.linalg.norm(exc))
    u = (d / nd)[:, None]
    merit = _Merit(g, u, radius, groups)
    fval, _ = _minimize_merit(merit, np.zeros(1), lam_lower=np.zeros(1))
    return math.sqrt(2 * max(fval, 0.0))


def stationarity_distance(g, radius, groups: GroupStructure, constraint: ConstraintSet, x,
                          *, warm_multiplier=None, return_multiplier=False):
    """``dist(0, g + prod_i B(0, radius_i) + N(x | X))``."""
    g = np.asarray(g, dtype=float)
    radius = np.asarray(radius, dtype=float)
    lam = None
    if isinstance(constraint, (Free, NonNegative, Box)):
        out = _separable_distance(g, radius, groups, constraint, x)
    elif isinstance(constraint, LinearEquality):
        out, lam = _equality_distance(g, radius, groups, constraint, warm_multiplier)
    elif isinstance(constraint, L2Ball):
        out = _ball_distance(g, radius, groups, constraint, x)
    else:
        raise TypeError(f"unsupported constraint {constraint!r}")
    if return_multiplier:
        return out, lam
    return out
