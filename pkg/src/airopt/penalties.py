"""Concave sparsity-inducing penalties and their reweighting rules.

Every penalty is described by a scalar function ``r`` on the nonnegative
reals with ``r(0) = 0``, nondecreasing, concave.  It is applied to a
nonnegative "magnitude" ``c`` of a block of variables.  Two framings of the
magnitude are supported (see :class:`Mode`):

* ``Mode.ABS``    -- ``c = ||x_i||_2`` and the penalty is ``r(c)``;
* ``Mode.SQUARE`` -- ``c = ||x_i||_2**2`` and the penalty is ``r(sqrt(c))``.

Both framings describe the same unrelaxed penalty; they differ in the
convex surrogate they produce (weighted l1 versus weighted l2 subproblems).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np


class DomainError(ValueError):
    """Argument outside the domain of a penalty function."""


class WeightSingularityError(ValueError):
    """A reweighting slope is infinite (zero magnitude without relaxation)."""

    def __init__(self, message, group=None):
        super().__init__(message)
        self.group = group


class PenaltyKind(str, enum.Enum):
    EXP = "exp"
    LPN = "lpn"
    LOG = "log"
    FRA = "fra"
    TAN = "tan"
    SCAD = "scad"
    MCP = "mcp"


class Mode(str, enum.Enum):
    """Magnitude framing; selects the l1-type or l2-type surrogate."""

    ABS = "l1"
    SQUARE = "l2"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        aliases = {"l1": cls.ABS, "abs": cls.ABS, "absolute": cls.ABS,
                   "l2": cls.SQUARE, "square": cls.SQUARE, "sq": cls.SQUARE}
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown mode {value!r}; expected l1 or l2") from None


@dataclass(frozen=True)
class Penalty:
    """A penalty kind together with its parameters.

    Only the parameters relevant to ``kind`` are used: ``p`` for EXP, LPN,
    LOG, FRA and TAN; ``lam`` and ``a`` for SCAD and MCP.
    """

    kind: PenaltyKind
    p: float | None = None
    lam: float | None = None
    a: float | None = None

    def __post_init__(self):
        kind = PenaltyKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind in (PenaltyKind.SCAD, PenaltyKind.MCP):
            if self.lam is None or self.a is None:
                raise ValueError(f"{kind.value} needs parameters lambda and a")
            lam, a = float(self.lam), float(self.a)
            if not (math.isfinite(lam) and lam > 0):
                raise ValueError(f"{kind.value}: lambda must be positive, got {lam}")
            if kind is PenaltyKind.SCAD and not (math.isfinite(a) and a > 2):
                raise ValueError(f"scad: a must be > 2, got {a}")
            if kind is PenaltyKind.MCP and not (math.isfinite(a) and a >= 1):
                raise ValueError(f"mcp: a must be >= 1, got {a}")
            object.__setattr__(self, "lam", lam)
            object.__setattr__(self, "a", a)
            object.__setattr__(self, "p", None)
        else:
            if self.p is None:
                raise ValueError(f"{kind.value} needs parameter p")
            p = float(self.p)
            if kind is PenaltyKind.LPN:
                if not (0 < p < 1):
                    raise ValueError(f"lpn: p must lie in the open interval (0,1), got {p}")
            elif not (math.isfinite(p) and p > 0):
                raise ValueError(f"{kind.value}: p must be positive, got {p}")
            object.__setattr__(self, "p", p)
            object.__setattr__(self, "lam", None)
            object.__setattr__(self, "a", None)

    # convenience constructors
    @classmethod
    def exp(cls, p):
        return cls(PenaltyKind.EXP, p=p)

    @classmethod
    def lpn(cls, p):
        return cls(PenaltyKind.LPN, p=p)

    @classmethod
    def log(cls, p):
        return cls(PenaltyKind.LOG, p=p)

    @classmethod
    def fra(cls, p):
        return cls(PenaltyKind.FRA, p=p)

    @classmethod
    def tan(cls, p):
        return cls(PenaltyKind.TAN, p=p)

    @classmethod
    def scad(cls, lam, a=3.7):
        return cls(PenaltyKind.SCAD, lam=lam, a=a)

    @classmethod
    def mcp(cls, lam, a):
        return cls(PenaltyKind.MCP, lam=lam, a=a)

    @property
    def breakpoints(self):
        """Points where ``r'`` is not differentiable (SCAD/MCP only)."""
        if self.kind is PenaltyKind.SCAD:
            return (self.lam, self.a * self.lam)
        if self.kind is PenaltyKind.MCP:
            return (self.a * self.lam,)
        return ()

    def __str__(self):
        if self.lam is not None:
            return f"{self.kind.value}(lambda={self.lam:g}, a={self.a:g})"
        return f"{self.kind.value}(p={self.p:g})"


def _as_float(c):
    arr = np.asarray(c, dtype=float)
    return arr


def _unwrap(arr, scalar):
    return float(arr) if scalar else arr


def r_value(pen: Penalty, c):
    """Penalty value ``r(c)`` for ``c >= 0`` (scalar or array)."""
    scalar = np.ndim(c) == 0
    c = _as_float(c)
    if np.any(c < 0) or np.any(np.isnan(c)):
        raise DomainError("r_value requires c >= 0")
    k = pen.kind
    with np.errstate(over="ignore"):
        if k is PenaltyKind.EXP:
            out = -np.expm1(-pen.p * c)
        elif k is PenaltyKind.LPN:
            out = c ** pen.p
        elif k is PenaltyKind.LOG:
            out = np.log1p(pen.p * c)
        elif k is PenaltyKind.FRA:
            out = c / (c + pen.p)
        elif k is PenaltyKind.TAN:
            out = np.arctan(pen.p * c)
        elif k is PenaltyKind.SCAD:
            lam, a = pen.lam, pen.a
            mid = (2 * a * lam * c - c * c - lam * lam) / (2 * (a - 1))
            out = np.where(c <= lam, lam * c,
                           np.where(c <= a * lam, mid, lam * lam * (a + 1) / 2))
        else:  # MCP
            lam, a = pen.lam, pen.a
            out = np.where(c <= a * lam, lam * c - c * c / (2 * a), a * lam * lam / 2)
    return _unwrap(out, scalar)


def _r_prime_unchecked(pen: Penalty, c):
    k = pen.kind
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        if k is PenaltyKind.EXP:
            return pen.p * np.exp(-pen.p * c)
        if k is PenaltyKind.LPN:
            return pen.p * c ** (pen.p - 1)
        if k is PenaltyKind.LOG:
            return pen.p / (1 + pen.p * c)
        if k is PenaltyKind.FRA:
            return pen.p / (c + pen.p) ** 2
        if k is PenaltyKind.TAN:
            return pen.p / (1 + (pen.p * c) ** 2)
        lam, a = pen.lam, pen.a
        if k is PenaltyKind.SCAD:
            tail = np.maximum(a * lam - c, 0.0) / (a - 1)
            return np.where(c <= lam, lam, tail)
        return np.maximum(a * lam - c, 0.0) / a


def r_prime(pen: Penalty, c):
    """Derivative ``r'(c)`` for ``c > 0``.

    At the SCAD/MCP breakpoints the left-branch formula is used.
    """
    scalar = np.ndim(c) == 0
    c = _as_float(c)
    if np.any(~(c > 0)):
        raise DomainError("r_prime requires c > 0; use r_prime_at_zero_limit at 0")
    return _unwrap(_r_prime_unchecked(pen, c) * np.ones_like(c), scalar)


def r_prime_at_zero_limit(pen: Penalty) -> float:
    """``lim_{c -> 0+} r'(c)``; ``math.inf`` for LPN."""
    k = pen.kind
    if k is PenaltyKind.LPN:
        return math.inf
    if k is PenaltyKind.FRA:
        return 1.0 / pen.p
    if k in (PenaltyKind.SCAD, PenaltyKind.MCP):
        return pen.lam
    return pen.p


def r_sup(pen: Penalty) -> float:
    """``sup_c r(c)``: the plateau value, or ``math.inf`` when unbounded."""
    k = pen.kind
    if k in (PenaltyKind.LPN, PenaltyKind.LOG):
        return math.inf
    if k in (PenaltyKind.EXP, PenaltyKind.FRA):
        return 1.0
    if k is PenaltyKind.TAN:
        return math.pi / 2
    if k is PenaltyKind.SCAD:
        return pen.lam ** 2 * (pen.a + 1) / 2
    return pen.a * pen.lam ** 2 / 2


def slope_at_zero(pen: Penalty, mode: Mode) -> float:
    """Right derivative at 0 of the framed penalty ``t -> phi(t)``.

    In square framing ``phi(t) = r(sqrt(t))`` whose slope at 0 is always
    infinite, so relaxation must be positive there.
    """
    if Mode.parse(mode) is Mode.SQUARE:
        return math.inf
    return r_prime_at_zero_limit(pen)


def framed_value(pen: Penalty, mode: Mode, t):
    """Framed penalty ``phi(t)``: ``r(t)`` (ABS) or ``r(sqrt(t))`` (SQUARE)."""
    if Mode.parse(mode) is Mode.SQUARE:
        return r_value(pen, np.sqrt(_as_float(t)) if np.ndim(t) else math.sqrt(t))
    return r_value(pen, t)


def weight(pen: Penalty, mode: Mode, c, eps):
    """Reweighting slope ``d phi / dt`` at ``t = c + eps``.

    ``c`` is the magnitude in the chosen framing (norm for ABS, squared norm
    for SQUARE).  In ABS framing this is ``r'(c + eps)``; in SQUARE framing
    it is ``r'(sqrt(c + eps)) / (2 sqrt(c + eps))``.  A zero argument is
    allowed only when the slope at zero is finite.
    """
    mode = Mode.parse(mode)
    scalar = np.ndim(c) == 0 and np.ndim(eps) == 0
    c = _as_float(c)
    eps = _as_float(eps)
    if np.any(c < 0) or np.any(eps < 0):
        raise DomainError("weight requires c >= 0 and eps >= 0")
    t = c + eps
    zero = t == 0
    if np.any(zero) and not math.isfinite(slope_at_zero(pen, mode)):
        idx = int(np.flatnonzero(np.broadcast_to(zero, t.shape).ravel())[0]) if t.ndim else None
        raise WeightSingularityError(
            f"weight is infinite for {pen} in {mode.value} framing at c + eps = 0", group=idx)
    if mode is Mode.ABS:
        safe = np.where(zero, 1.0, t)
        out = np.where(zero, r_prime_at_zero_limit(pen), _r_prime_unchecked(pen, safe))
    else:
        root = np.sqrt(t)
        out = _r_prime_unchecked(pen, root) / (2 * root)
    return _unwrap(np.asarray(out, dtype=float), scalar)
