"""Problem definition, objectives, and the convex surrogate.

A problem is ``min f(x) + sum_i r(c_i(x_i))`` over a closed convex set,
with ``f`` a convex quadratic (possibly zero), ``c_i`` the norm or squared
norm of block ``i`` and ``r`` a concave penalty from :mod:`airopt.penalties`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from airopt.penalties import (
    Mode,
    Penalty,
    WeightSingularityError,
    framed_value,
    weight,
)

FEAS_TOL = 1e-8
DEFAULT_WEIGHT_FLOOR = 1e-12


class DimensionError(ValueError):
    pass


class SingularSystemError(np.linalg.LinAlgError):
    pass


class InfeasiblePointError(ValueError):
    def __init__(self, message, violation):
        super().__init__(message)
        self.violation = violation


# --------------------------------------------------------------------------
# groups


class GroupStructure:
    """Partition of ``{0, ..., n-1}`` into ordered blocks."""

    def __init__(self, blocks: Sequence[Sequence[int]]):
        blocks = [np.asarray(b, dtype=np.intp).ravel() for b in blocks]
        if not blocks:
            raise ValueError("group structure needs at least one block")
        if any(b.size == 0 for b in blocks):
            raise ValueError("every group must be nonempty")
        allidx = np.concatenate(blocks)
        n = allidx.size
        counts = np.bincount(allidx, minlength=n) if np.all(allidx >= 0) else None
        if counts is None or counts.size != n or np.any(counts != 1):
            raise ValueError("groups must be pairwise disjoint and cover 0..n-1 exactly")
        self.blocks = tuple(blocks)
        self.n = n
        self.m = len(blocks)
        self.sizes = np.array([b.size for b in blocks], dtype=np.intp)
        labels = np.empty(n, dtype=np.intp)
        for i, b in enumerate(blocks):
            labels[b] = i
        self.labels = labels
        self.singleton = bool(np.all(self.sizes == 1))
        if self.singleton:
            self._perm = allidx  # coordinate of group i

    @classmethod
    def singletons(cls, n):
        return cls([[j] for j in range(n)])

    @classmethod
    def contiguous(cls, sizes):
        sizes = [int(s) for s in sizes]
        if any(s < 1 for s in sizes):
            raise ValueError("block sizes must be >= 1")
        edges = np.cumsum([0] + sizes)
        return cls([range(edges[i], edges[i + 1]) for i in range(len(sizes))])

    @classmethod
    def uniform(cls, n, size):
        if size < 1 or n % size:
            raise ValueError(f"group size {size} must divide n={n}")
        return cls.contiguous([size] * (n // size))

    def sqnorms(self, x):
        x = np.asarray(x, dtype=float)
        if self.singleton:
            return x[self._perm] ** 2
        return np.bincount(self.labels, weights=x * x, minlength=self.m)

    def norms(self, x):
        return np.sqrt(self.sqnorms(x))

    def expand(self, values):
        """Broadcast one value per group to one value per coordinate."""
        return np.asarray(values, dtype=float)[self.labels]

    def __eq__(self, other):
        return (isinstance(other, GroupStructure) and self.m == other.m
                and all(np.array_equal(a, b) for a, b in zip(self.blocks, other.blocks)))

    def __repr__(self):
        return f"GroupStructure(n={self.n}, m={self.m})"


def c_value(mode, x_block):
    """Block magnitude: norm (ABS) or squared norm (SQUARE)."""
    x_block = np.asarray(x_block, dtype=float).ravel()
    sq = float(np.dot(x_block, x_block))
    return sq if Mode.parse(mode) is Mode.SQUARE else math.sqrt(sq)


def magnitudes(mode, groups: GroupStructure, x):
    sq = groups.sqnorms(x)
    return sq if Mode.parse(mode) is Mode.SQUARE else np.sqrt(sq)


# --------------------------------------------------------------------------
# smooth losses (all quadratic: f(x) = 1/2 x'Hx - h'x + const)


class SmoothLoss:
    n: int | None = None
    lower_bound: float | None = None

    def value(self, x):
        raise NotImplementedError

    def grad(self, x):
        raise NotImplementedError

    def hessian(self, n):
        raise NotImplementedError

    def linear(self, n):
        raise NotImplementedError

    def lipschitz(self):
        raise NotImplementedError

    def coercive(self):
        return False

    @property
    def is_zero(self):
        return False


class ZeroLoss(SmoothLoss):
    lower_bound = 0.0

    def __init__(self, n=None):
        self.n = n

    def value(self, x):
        return 0.0

    def grad(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def hessian(self, n):
        return np.zeros((n, n))

    def linear(self, n):
        return np.zeros(n)

    def lipschitz(self):
        return 0.0

    @property
    def is_zero(self):
        return True

    def __repr__(self):
        return "ZeroLoss()"


class LeastSquares(SmoothLoss):
    """``f(x) = 0.5 * ||M x - y||^2``."""

    def __init__(self, M, y, lower_bound=0.0):
        self.M = np.atleast_2d(np.asarray(M, dtype=float))
        self.y = np.asarray(y, dtype=float).ravel()
        if self.M.shape[0] != self.y.size:
            raise DimensionError(f"M has {self.M.shape[0]} rows but y has {self.y.size} entries")
        self.n = self.M.shape[1]
        self.lower_bound = lower_bound
        self._H = None
        self._L = None

    def value(self, x):
        r = self.M @ x - self.y
        return 0.5 * float(r @ r)

    def grad(self, x):
        return self.M.T @ (self.M @ x - self.y)

    def hessian(self, n=None):
        if self._H is None:
            self._H = self.M.T @ self.M
        return self._H

    def linear(self, n=None):
        return self.M.T @ self.y

    def lipschitz(self):
        if self._L is None:
            self._L = float(np.linalg.norm(self.M, 2) ** 2) if self.M.size else 0.0
        return self._L

    def coercive(self):
        return self.M.shape[0] >= self.n and np.linalg.matrix_rank(self.M) == self.n

    def __repr__(self):
        return f"LeastSquares(shape={self.M.shape})"


class Quadratic(SmoothLoss):
    """``f(x) = 0.5 x'Qx + q'x`` with ``Q`` symmetric positive semidefinite."""

    def __init__(self, Q, q, lower_bound=None):
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        q = np.asarray(q, dtype=float).ravel()
        if Q.shape != (q.size, q.size):
            raise DimensionError("Q must be n-by-n with n = len(q)")
        if not np.allclose(Q, Q.T, atol=1e-12 * (1 + np.abs(Q).max())):
            raise ValueError("Q must be symmetric")
        Q = 0.5 * (Q + Q.T)
        jitter = 1e-10 * (1.0 + np.abs(np.diag(Q)).max())
        try:
            sla.cholesky(Q + jitter * np.eye(q.size), lower=True)
        except np.linalg.LinAlgError:
            raise ValueError("Q must be positive semidefinite") from None
        self.Q, self.q, self.n = Q, q, q.size
        if lower_bound is None:
            lower_bound = self._unconstrained_min()
        self.lower_bound = lower_bound

    def _unconstrained_min(self):
        x, *_ = np.linalg.lstsq(self.Q, -self.q, rcond=None)
        if np.linalg.norm(self.Q @ x + self.q) > 1e-8 * (1 + np.linalg.norm(self.q)):
            return None  # unbounded below on R^n
        return float(0.5 * x @ self.Q @ x + self.q @ x)

    def value(self, x):
        return float(0.5 * x @ (self.Q @ x) + self.q @ x)

    def grad(self, x):
        return self.Q @ x + self.q

    def hessian(self, n=None):
        return self.Q

    def linear(self, n=None):
        return -self.q

    def lipschitz(self):
        return float(np.linalg.eigvalsh(self.Q)[-1]) if self.n else 0.0

    def coercive(self):
        return self.n > 0 and float(np.linalg.eigvalsh(self.Q)[0]) > 1e-12 * (1 + np.abs(self.Q).max())

    def __repr__(self):
        return f"Quadratic(n={self.n})"


# --------------------------------------------------------------------------
# constraint sets


class ConstraintSet:
    n: int | None = None
    separable = False

    def project(self, v):
        raise NotImplementedError

    def violation(self, x):
        raise NotImplementedError

    def is_bounded(self):
        return False

    def feasible(self, x):
        return self.violation(x) <= FEAS_TOL * (1 + np.linalg.norm(x))


class Free(ConstraintSet):
    separable = True

    def project(self, v):
        return np.array(v, dtype=float)

    def violation(self, x):
        return 0.0

    def bounds(self, n):
        return np.full(n, -np.inf), np.full(n, np.inf)

    def __repr__(self):
        return "Free()"


class NonNegative(ConstraintSet):
    separable = True

    def project(self, v):
        return np.maximum(np.asarray(v, dtype=float), 0.0)

    def violation(self, x):
        return float(np.linalg.norm(np.minimum(x, 0.0)))

    def bounds(self, n):
        return np.zeros(n), np.full(n, np.inf)

    def __repr__(self):
        return "NonNegative()"


class Box(ConstraintSet):
    separable = True

    def __init__(self, lo, hi):
        lo = np.asarray(lo, dtype=float).ravel()
        hi = np.asarray(hi, dtype=float).ravel()
        if lo.shape != hi.shape:
            raise DimensionError("box bounds must have equal length")
        if np.any(lo > hi):
            raise ValueError("box requires lo <= hi componentwise")
        self.lo, self.hi, self.n = lo, hi, lo.size

    def project(self, v):
        return np.clip(np.asarray(v, dtype=float), self.lo, self.hi)

    def violation(self, x):
        return float(np.linalg.norm(np.maximum(self.lo - x, 0) + np.maximum(x - self.hi, 0)))

    def is_bounded(self):
        return bool(np.all(np.isfinite(self.lo)) and np.all(np.isfinite(self.hi)))

    def bounds(self, n):
        return self.lo, self.hi

    def __repr__(self):
        return f"Box(n={self.n})"


class LinearEquality(ConstraintSet):
    """``{x : A x = b}``; the row rank is checked at construction."""

    def __init__(self, A, b):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.asarray(b, dtype=float).ravel()
        if A.shape[0] != b.size:
            raise DimensionError(f"A has {A.shape[0]} rows but b has {b.size} entries")
        self.A, self.b, self.n = A, b, A.shape[1]
        self.rank = int(np.linalg.matrix_rank(A)) if A.size else 0
        self.full_row_rank = self.rank == A.shape[0]
        self._qr = None

    def _factors(self):
        if not self.full_row_rank:
            raise SingularSystemError(
                f"A A^T is singular: rank {self.rank} < {self.A.shape[0]} rows")
        if self._qr is None:
            Q, R = np.linalg.qr(self.A.T)
            self._qr = (Q, R)
        return self._qr

    def project(self, v):
        v = np.asarray(v, dtype=float)
        Q, R = self._factors()
        corr = sla.solve_triangular(R, self.A @ v - self.b, trans="T")
        return v - Q @ corr

    def least_norm_point(self):
        return self.project(np.zeros(self.n))

    def violation(self, x):
        return float(np.linalg.norm(self.A @ x - self.b))

    def is_bounded(self):
        return self.rank == self.n

    def __repr__(self):
        return f"LinearEquality(shape={self.A.shape})"


class L2Ball(ConstraintSet):
    def __init__(self, center, radius):
        center = np.asarray(center, dtype=float).ravel()
        radius = float(radius)
        if not (radius > 0 and math.isfinite(radius)):
            raise ValueError("ball radius must be positive")
        self.center, self.radius, self.n = center, radius, center.size

    def project(self, v):
        v = np.asarray(v, dtype=float)
        d = v - self.center
        nd = np.linalg.norm(d)
        if nd <= self.radius:
            return v.copy()
        return self.center + d * (self.radius / nd)

    def violation(self, x):
        return max(float(np.linalg.norm(x - self.center)) - self.radius, 0.0)

    def is_bounded(self):
        return True

    def __repr__(self):
        return f"L2Ball(n={self.n}, radius={self.radius:g})"


# --------------------------------------------------------------------------
# problem


@dataclass(frozen=True)
class ProblemSpec:
    loss: SmoothLoss
    penalty: Penalty
    mode: Mode
    groups: GroupStructure
    constraint: ConstraintSet = field(default_factory=Free)

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode.parse(self.mode))
        n = self.groups.n
        for name, part in (("loss", self.loss), ("constraint", self.constraint)):
            pn = getattr(part, "n", None)
            if pn is not None and pn != n:
                raise DimensionError(f"{name} has dimension {pn}, groups cover {n}")

    @property
    def n(self):
        return self.groups.n

    @property
    def m(self):
        return self.groups.m

    def check_dim(self, x):
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.n:
            raise DimensionError(f"expected a vector of length {self.n}, got {x.size}")
        return x

    def eps_vector(self, eps):
        eps = np.broadcast_to(np.asarray(eps, dtype=float), (self.m,)).copy()
        if np.any(eps < 0) or np.any(~np.isfinite(eps)):
            raise ValueError("relaxation must be finite and nonnegative")
        return eps


def _penalty_sum(problem, x, eps):
    c = magnitudes(problem.mode, problem.groups, x)
    return float(np.sum(framed_value(problem.penalty, problem.mode, c + eps)))


def objective_J(problem: ProblemSpec, x, eps, *, return_violation=False):
    """Relaxed objective ``f(x) + sum_i phi(c_i(x_i) + eps_i)``."""
    x = problem.check_dim(x)
    eps = problem.eps_vector(eps)
    val = problem.loss.value(x) + _penalty_sum(problem, x, eps)
    if return_violation:
        return val, problem.constraint.violation(x)
    return val


def objective_J0(problem: ProblemSpec, x, *, return_violation=False):
    """Unrelaxed objective; identical code path to ``objective_J(x, 0)``."""
    return objective_J(problem, x, 0.0, return_violation=return_violation)


def sandwich_bounds(problem: ProblemSpec, x, eps):
    """Lower and upper bounds on ``J(x; eps)`` in terms of ``J0(x)``."""
    x = problem.check_dim(x)
    eps = problem.eps_vector(eps)
    if np.any(eps <= 0):
        raise ValueError("sandwich bounds need strictly positive relaxation")
    lo = objective_J0(problem, x)
    c = magnitudes(problem.mode, problem.groups, x)
    zero = c == 0
    extra = float(np.sum(framed_value(problem.penalty, problem.mode, eps[zero])))
    if np.any(~zero):
        slopes = weight(problem.penalty, problem.mode, c[~zero], 0.0)
        extra += float(np.sum(slopes * eps[~zero]))
    return lo, lo + extra


def compute_weights(problem: ProblemSpec, x_ref, eps, weight_floor=DEFAULT_WEIGHT_FLOOR):
    x_ref = problem.check_dim(x_ref)
    eps = problem.eps_vector(eps)
    c = magnitudes(problem.mode, problem.groups, x_ref)
    try:
        w = weight(problem.penalty, problem.mode, c, eps)
    except WeightSingularityError as exc:
        raise WeightSingularityError(f"group {exc.group}: {exc}", group=exc.group) from None
    return np.maximum(np.atleast_1d(w), weight_floor)


def surrogate_value(loss, mode, groups, constraint, weights, x, *, tol_scale=1.0):
    x = np.asarray(x, dtype=float)
    viol = constraint.violation(x)
    if viol > tol_scale * FEAS_TOL * (1 + np.linalg.norm(x)):
        return math.inf
    return loss.value(x) + float(weights @ magnitudes(mode, groups, x))


def surrogate_G(problem: ProblemSpec, x_ref, eps, x, weight_floor=DEFAULT_WEIGHT_FLOOR):
    """Convex model ``f(x) + sum_i w_i c_i(x_i)`` with weights frozen at ``x_ref``."""
    w = compute_weights(problem, x_ref, eps, weight_floor)
    x = problem.check_dim(x)
    return surrogate_value(problem.loss, problem.mode, problem.groups,
                           problem.constraint, w, x)


def sparsity(problem: ProblemSpec, x, threshold=1e-3):
    """Number of groups whose norm exceeds ``threshold``."""
    return int(np.count_nonzero(problem.groups.norms(x) > threshold))
