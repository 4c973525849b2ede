"""Minimal-deviation safety filter for a single affine barrier constraint.

For control-affine dynamics xdot = f0(x) + g(x) u the barrier condition
turns into one linear inequality a.u >= rhs - c in the input, with
a = g(x)^T grad_h and c = grad_h . f0(x).  Projecting a desired input onto
that half-space has a closed form; intersecting with a box input set
reduces to a one-dimensional monotone root find in the dual multiplier.

Infeasibility is surfaced, never silently clipped: with a certified
smoothing threshold it should not occur, so at runtime it is an event the
caller must decide on.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .errors import InvalidInputError

__all__ = [
    "ControlAffineSystem",
    "ClassK",
    "ClassKinfK",
    "FilterOutcome",
    "barrier_row",
    "filter_unconstrained",
    "filter_boxed",
    "make_rhs",
]


@dataclass(frozen=True)
class ControlAffineSystem:
    """Dynamics xdot = drift(x) + actuation(x) @ u with an optional box input set.

    drift maps (n,) -> (n,); actuation maps (n,) -> (n, m).  Batched calls
    with a leading axis are allowed when the underlying functions support
    numpy broadcasting (the shipped benchmarks do).  input_box, when
    present, is (m, 2) rows [lo, hi].
    """

    n: int
    m: int
    drift: Callable[[np.ndarray], np.ndarray]
    actuation: Callable[[np.ndarray], np.ndarray]
    input_box: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise InvalidInputError("need n >= 1 and m >= 1")
        if self.input_box is not None:
            box = np.asarray(self.input_box, dtype=float)
            if box.shape != (self.m, 2) or not np.all(box[:, 0] < box[:, 1]):
                raise InvalidInputError(f"input box must be (m, 2) with lo < hi, got {box!r}")
            object.__setattr__(self, "input_box", box)


@dataclass(frozen=True)
class ClassK:
    """Strictly increasing relaxation function with alpha(0) = 0.

    kind 'linear': kappa*h; 'cubic': kappa*h^3; 'tanh': kappa*tanh(scale*h)
    (bounded, so not suitable where an unbounded relaxation is required).
    All forms extend oddly to negative arguments, which is what the filter
    needs when the barrier value dips below zero.
    """

    kind: str = "linear"
    kappa: float = 1.0
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("linear", "cubic", "tanh"):
            raise InvalidInputError(f"unknown class-K kind {self.kind!r}")
        if self.kappa <= 0 or self.scale <= 0:
            raise InvalidInputError("class-K parameters must be positive")

    @property
    def unbounded(self) -> bool:
        return self.kind in ("linear", "cubic")

    def __call__(self, h: float) -> float:
        h = float(h)
        if self.kind == "linear":
            return self.kappa * h
        if self.kind == "cubic":
            return self.kappa * h**3
        return self.kappa * math.tanh(self.scale * h)


@dataclass(frozen=True)
class ClassKinfK:
    """State-norm weighted relaxation gamma(h, s) = alpha1(h) * (1 + beta(s)).

    alpha1 must be unbounded in h (linear or cubic); beta is any class-K
    function of the state norm.  Used for extended barrier conditions on
    unbounded sets, where the admissible relaxation may grow with |x|.
    """

    alpha1: ClassK
    beta: ClassK

    def __post_init__(self):
        if not self.alpha1.unbounded:
            raise InvalidInputError("alpha1 must be an unbounded class-K function")

    def __call__(self, h: float, x_norm: float) -> float:
        if x_norm < 0:
            raise InvalidInputError("state norm must be nonnegative")
        return self.alpha1(h) * (1.0 + self.beta(x_norm))


@dataclass(frozen=True)
class FilterOutcome:
    """Filter result: input u, slack of the barrier inequality at u
    (nonnegative unless infeasible), whether u differs from the desired
    input, and how the solution was obtained."""

    u: np.ndarray
    constraint_value: float
    modified: bool
    qp_status: str  # "analytic" | "clipped" | "infeasible"


def barrier_row(sys: ControlAffineSystem, grad_h, x) -> tuple[np.ndarray, float]:
    """Coefficients of the barrier inequality: a = g(x)^T grad_h, c = grad_h . f0(x),
    so that the Lie derivative under input u is c + a.u."""
    grad_h = np.asarray(grad_h, dtype=float)
    x = np.asarray(x, dtype=float)
    if grad_h.shape != (sys.n,) or x.shape != (sys.n,):
        raise InvalidInputError(f"expected shape ({sys.n},) for gradient and state")
    if not (np.all(np.isfinite(grad_h)) and np.all(np.isfinite(x))):
        raise InvalidInputError("gradient and state must be finite")
    g = np.asarray(sys.actuation(x), dtype=float).reshape(sys.n, sys.m)
    a = g.T @ grad_h
    c = float(grad_h @ np.asarray(sys.drift(x), dtype=float).reshape(sys.n))
    return a, c


def filter_unconstrained(a, c: float, rhs: float, u_des) -> FilterOutcome:
    """Project u_des onto the half-space a.u >= rhs - c (inputs unconstrained).

    Already-feasible inputs are returned bit-identical.  Infeasible only
    when a = 0 with the inequality violated, i.e. the barrier condition
    itself fails at this state.
    """
    a = np.asarray(a, dtype=float).reshape(-1)
    u_des = np.asarray(u_des, dtype=float).reshape(-1)
    if a.shape != u_des.shape:
        raise InvalidInputError(f"a {a.shape} and u_des {u_des.shape} must match")
    slack = float(c + a @ u_des - rhs)
    if slack >= 0.0:
        return FilterOutcome(u=u_des, constraint_value=slack, modified=False, qp_status="analytic")
    nrm2 = float(a @ a)
    if nrm2 == 0.0:
        return FilterOutcome(u=u_des, constraint_value=slack, modified=False, qp_status="infeasible")
    u = u_des + ((rhs - c - float(a @ u_des)) / nrm2) * a
    return FilterOutcome(
        u=u, constraint_value=float(c + a @ u - rhs), modified=True, qp_status="analytic"
    )


def _clip(u, box):
    return np.clip(u, box[:, 0], box[:, 1])


def filter_boxed(a, c: float, rhs: float, u_des, box) -> FilterOutcome:
    """Project u_des onto {a.u >= rhs - c} intersected with a box input set.

    The KKT solution is u(lam) = clip(u_des + lam*a, box) with the smallest
    lam >= 0 making the inequality hold; a.u(lam) is nondecreasing in lam,
    so the multiplier is found by bracketing and bisection (bracket
    tolerance 1e-10).  Infeasible when even the best box corner violates.
    """
    a = np.asarray(a, dtype=float).reshape(-1)
    u_des = np.asarray(u_des, dtype=float).reshape(-1)
    box = np.asarray(box, dtype=float)
    m = a.size
    if box.shape != (m, 2) or not np.all(box[:, 0] < box[:, 1]):
        raise InvalidInputError(f"box must be ({m}, 2) with lo < hi")

    target = rhs - c
    u0 = _clip(u_des, box)
    if float(a @ u0) >= target:
        modified = not np.array_equal(u0, u_des)
        status = "clipped" if modified else "analytic"
        return FilterOutcome(
            u=u0, constraint_value=float(c + a @ u0 - rhs), modified=modified, qp_status=status
        )

    # best achievable value of a.u over the box
    u_best = np.where(a > 0, box[:, 1], np.where(a < 0, box[:, 0], u0))
    if float(a @ u_best) < target:
        return FilterOutcome(
            u=u_best,
            constraint_value=float(c + a @ u_best - rhs),
            modified=True,
            qp_status="infeasible",
        )

    # if the unconstrained projection stays inside the box it is exact
    nrm2 = float(a @ a)
    lam_free = (target - float(a @ u_des)) / nrm2
    u_free = u_des + lam_free * a
    if np.all(u_free >= box[:, 0]) and np.all(u_free <= box[:, 1]):
        return FilterOutcome(
            u=u_free,
            constraint_value=float(c + a @ u_free - rhs),
            modified=True,
            qp_status="analytic",
        )

    def phi(lam):
        return float(a @ _clip(u_des + lam * a, box)) - target

    lam_lo, lam_hi = 0.0, max(lam_free, 1e-16)
    for _ in range(200):
        if phi(lam_hi) >= 0.0:
            break
        lam_lo = lam_hi
        lam_hi *= 2.0
    # bisect: keep phi(lam_hi) >= 0 > phi(lam_lo)
    tol = min(1e-10, 1e-9 / max(1.0, nrm2))
    while lam_hi - lam_lo > tol:
        mid = 0.5 * (lam_lo + lam_hi)
        if phi(mid) >= 0.0:
            lam_hi = mid
        else:
            lam_lo = mid
    u = _clip(u_des + lam_hi * a, box)
    return FilterOutcome(
        u=u, constraint_value=float(c + a @ u - rhs), modified=True, qp_status="clipped"
    )


def make_rhs(alpha: Union[ClassK, ClassKinfK], h_val: float, x_norm: Optional[float] = None) -> float:
    """Right-hand side of the barrier inequality: -alpha(h) or -gamma(h, |x|)."""
    if isinstance(alpha, ClassKinfK):
        if x_norm is None:
            raise InvalidInputError("state norm required for a state-weighted relaxation")
        return -alpha(float(h_val), float(x_norm))
    return -alpha(float(h_val))
