"""Log-sum-exp smooth minimum.

Given constraint values h_1..h_N and a sharpness theta > 0, the smooth
minimum is

    softmin_theta(h) = -(1/theta) * log( sum_i exp(-theta * h_i) ),

which under-approximates min_i h_i by at most log(N)/theta.  The module
also provides the softmax weights that mix the constraint gradients, the
active/inactive index split at a numerical tolerance, and the split of a
weighted Lie-derivative sum into its active and inactive parts.

All functions are pure and safe to call concurrently.  Non-finite inputs
are rejected at the boundary rather than propagated.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InvalidInputError

__all__ = [
    "SoftMinResult",
    "ActivePartition",
    "softmin_value",
    "softmin_weights",
    "softmin_evaluate",
    "softmin_gradient",
    "partition",
    "lie_decomposition",
    "default_activity_tolerance",
]


def _as_values(values) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or v.size < 1:
        raise InvalidInputError(f"expected a 1-d vector of at least one value, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("constraint values must be finite")
    return v


def _check_theta(theta: float) -> float:
    theta = float(theta)
    if not np.isfinite(theta) or theta <= 0.0:
        raise DomainError(f"theta must be a finite positive number, got {theta}")
    return theta


@dataclass(frozen=True)
class SoftMinResult:
    """Smooth-minimum value together with the softmax weights that produced it."""

    value: float
    weights: np.ndarray
    theta: float


@dataclass(frozen=True)
class ActivePartition:
    """Index split at a point: `active` holds the indices within `tolerance`
    of the pointwise minimum, `inactive` the rest.  `gaps[j]` is the
    nonnegative distance of value j above the minimum."""

    active: np.ndarray
    inactive: np.ndarray
    gaps: np.ndarray
    tolerance: float

    @property
    def n(self) -> int:
        return self.gaps.size


def default_activity_tolerance(h_min: float) -> float:
    """Default tolerance for deciding which constraints count as active.

    Scales with the magnitude of the pointwise minimum because exact
    floating-point ties never occur.
    """
    return 1e-8 * (1.0 + abs(float(h_min)))


def softmin_value(values, theta: float) -> float:
    """Smooth minimum of `values` at sharpness `theta`.

    Computed in max-shifted form so the result is finite for any finite
    input, including theta in the hundreds.  A single value is returned
    unchanged (no log/exp round trip).
    """
    v = _as_values(values)
    theta = _check_theta(theta)
    if v.size == 1:
        return float(v[0])
    z = -theta * v
    zmax = z.max()
    return float(-(zmax + np.log(np.sum(np.exp(z - zmax)))) / theta)


def softmin_weights(values, theta: float) -> np.ndarray:
    """Softmax weights w_i = exp(-theta*h_i) / sum_j exp(-theta*h_j).

    Strictly inside (0, 1) for N >= 2 up to floating-point underflow of the
    far-from-minimum entries; always sums to 1.
    """
    v = _as_values(values)
    theta = _check_theta(theta)
    if v.size == 1:
        return np.array([1.0])
    z = -theta * v
    e = np.exp(z - z.max())
    return e / e.sum()


def softmin_evaluate(values, theta: float) -> SoftMinResult:
    """Value and weights in one call."""
    return SoftMinResult(softmin_value(values, theta), softmin_weights(values, theta), float(theta))


def softmin_gradient(gradients, weights) -> np.ndarray:
    """Convex combination sum_i w_i * grad_i of the constraint gradients.

    This is the gradient of the smooth minimum when `weights` are the
    softmax weights of the same values the gradients belong to.
    """
    g = np.asarray(gradients, dtype=float)
    w = np.asarray(weights, dtype=float)
    if g.ndim == 1:
        g = g.reshape(w.size, -1) if w.size > 1 else g.reshape(1, -1)
    if g.ndim != 2 or w.ndim != 1 or g.shape[0] != w.size:
        raise InvalidInputError(f"gradient block {g.shape} does not match {w.size} weights")
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(w))):
        raise InvalidInputError("gradients and weights must be finite")
    if abs(w.sum() - 1.0) > 1e-6:
        raise InvalidInputError(f"weights must sum to 1, got {w.sum()!r}")
    return w @ g


def partition(values, tolerance: float) -> ActivePartition:
    """Split indices into active (gap <= tolerance) and inactive (gap > tolerance)."""
    v = _as_values(values)
    tolerance = float(tolerance)
    if tolerance < 0.0:
        raise DomainError(f"tolerance must be nonnegative, got {tolerance}")
    gaps = v - v.min()
    mask = gaps <= tolerance
    idx = np.arange(v.size)
    return ActivePartition(idx[mask], idx[~mask], gaps, tolerance)


def lie_decomposition(lie_values, weights, part: ActivePartition) -> tuple[float, float]:
    """Split the weighted sum of per-constraint Lie derivatives into the
    contribution of active indices and of inactive indices.

    The two parts add up to dot(weights, lie_values).
    """
    lie = np.asarray(lie_values, dtype=float)
    w = np.asarray(weights, dtype=float)
    if lie.shape != w.shape or lie.ndim != 1:
        raise InvalidInputError(f"lie values {lie.shape} do not match weights {w.shape}")
    if lie.size != part.n:
        raise InvalidInputError(f"partition covers {part.n} indices, got {lie.size} values")
    active_part = float(np.sum(w[part.active] * lie[part.active]))
    inactive_part = float(np.sum(w[part.inactive] * lie[part.inactive]))
    return active_part, inactive_part
