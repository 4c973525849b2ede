"""Constraint families, boundary-band sampling, and sampled safety bounds.

A safe set is described by N scalar constraints h_i with gradients; the set
is where every h_i is nonnegative, i.e. where the pointwise minimum
(written h_hat below) is nonnegative.  Certification works on the band

    T_eps = { x : 0 <= h_hat(x) <= eps }

just inside the boundary.  Everything here has sampled-certificate
semantics: the bounds hold at the sampled points, and the sampling density
is the caller's rigor knob.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import (
    DomainError,
    EmptyTubeError,
    InvalidCertificateError,
    InvalidInputError,
    NotStrictlySafeError,
)
from .softmin import default_activity_tolerance

__all__ = [
    "ConstraintSet",
    "TubeSpec",
    "CompactBounds",
    "MFCQEntry",
    "MFCQReport",
    "sample_tube",
    "estimate_bounds",
    "check_mfcq",
    "shrink_epsilon_until_safe",
    "eval_field",
]

# callable x -> xdot; must at least accept a single state of shape (n,)
VectorField = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ConstraintSet:
    """Family of N constraint functions with gradients on an n-dimensional state.

    `evaluators[i]` maps a state x of shape (n,) to (h_i(x), grad_i(x)).
    `bounding_box` (shape (n, 2), rows [lo, hi]) marks compact-mode: a box
    believed to contain the safe set, required for any sampling operation.
    `batch_evaluator`, when given, maps a block X of shape (B, n) to
    (values (B, N), gradients (B, N, n)) and must agree with the
    per-constraint evaluators; it exists purely so bulk sampling avoids a
    Python loop.  Evaluators must be safe for concurrent invocation.
    """

    n: int
    evaluators: tuple
    bounding_box: Optional[np.ndarray] = None
    batch_evaluator: Optional[Callable] = None

    def __post_init__(self):
        if self.n < 1 or len(self.evaluators) < 1:
            raise InvalidInputError("need n >= 1 and at least one constraint")
        if self.bounding_box is not None:
            box = np.asarray(self.bounding_box, dtype=float)
            if box.shape != (self.n, 2) or not np.all(box[:, 0] < box[:, 1]):
                raise InvalidInputError(f"bounding box must be (n, 2) with lo < hi, got {box!r}")
            object.__setattr__(self, "bounding_box", box)

    @property
    def N(self) -> int:
        return len(self.evaluators)

    @property
    def compact_mode(self) -> bool:
        return self.bounding_box is not None

    def evaluate(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Values (N,) and gradients (N, n) at one state."""
        x = np.asarray(x, dtype=float)
        vals = np.empty(self.N)
        grads = np.empty((self.N, self.n))
        for i, ev in enumerate(self.evaluators):
            v, g = ev(x)
            vals[i] = v
            grads[i] = np.asarray(g, dtype=float)
        return vals, grads

    def evaluate_batch(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Values (B, N) and gradients (B, N, n) at a block of states."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.batch_evaluator is not None:
            vals, grads = self.batch_evaluator(X)
            return np.asarray(vals, dtype=float), np.asarray(grads, dtype=float)
        vals = np.empty((X.shape[0], self.N))
        grads = np.empty((X.shape[0], self.N, self.n))
        for b, x in enumerate(X):
            vals[b], grads[b] = self.evaluate(x)
        return vals, grads

    def min_values(self, X) -> np.ndarray:
        """Pointwise minimum over constraints for a block of states."""
        vals, _ = self.evaluate_batch(X)
        return vals.min(axis=1)


@dataclass(frozen=True)
class TubeSpec:
    """Samples of the boundary band {0 <= h_hat <= epsilon}.

    `constraint_coverage[i]` is True when some stored sample has constraint
    i attaining the pointwise minimum.
    """

    epsilon: float
    samples: np.ndarray
    sampling_density: float
    constraint_coverage: np.ndarray = field(default=None)
    seed: Optional[int] = None

    def __len__(self) -> int:
        return self.samples.shape[0]


@dataclass(frozen=True)
class CompactBounds:
    """Sampled certificate constants over one boundary band.

    M: largest |Lie derivative| of any constraint over the samples.
    r: smallest Lie derivative among active constraints (must be > 0).
    d: smallest value gap of any inactive constraint; +inf when every
       sample had all constraints active (no inactive terms anywhere).
    """

    M: float
    r: float
    d: float
    epsilon: float
    n_samples: int

    def __post_init__(self):
        if not (self.M >= self.r > 0.0):
            raise InvalidCertificateError(f"need M >= r > 0, got M={self.M}, r={self.r}")
        if not self.d > 0.0:
            raise InvalidCertificateError(f"need d > 0, got d={self.d}")


def eval_field(F: VectorField, X: np.ndarray) -> np.ndarray:
    """Evaluate a vector field on a block of states (B, n) -> (B, n).

    Tries one batched call first; falls back to a row loop for fields that
    only accept single states.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    try:
        out = np.asarray(F(X), dtype=float)
        if out.shape == X.shape:
            return out
    except Exception:
        pass
    return np.stack([np.asarray(F(x), dtype=float) for x in X])


def _require_box(cs: ConstraintSet) -> np.ndarray:
    if not cs.compact_mode:
        raise InvalidInputError("operation requires compact-mode (a bounding box)")
    return cs.bounding_box


def _bisect_to_band(cs, inside, outside, lo_target, hi_target, max_iter=80):
    """Bisect between blocks of inside (h_hat >= 0) and outside (h_hat < 0)
    points until the inside endpoint has h_hat in [lo_target, hi_target].
    Returns the refined inside points and a mask of rows that converged."""
    inside = inside.copy()
    outside = outside.copy()
    h_in = cs.min_values(inside)
    done = (h_in >= lo_target) & (h_in <= hi_target)
    for _ in range(max_iter):
        if done.all():
            break
        mid = 0.5 * (inside + outside)
        h_mid = cs.min_values(mid)
        go_in = h_mid >= 0.0
        upd = ~done
        sel_in = upd & go_in
        sel_out = upd & ~go_in
        inside[sel_in] = mid[sel_in]
        outside[sel_out] = mid[sel_out]
        h_in = np.where(sel_in, h_mid, h_in)
        done = (h_in >= lo_target) & (h_in <= hi_target)
    return inside, done


def sample_tube(cs: ConstraintSet, epsilon: float, density: float, seed: int) -> TubeSpec:
    """Sample the band {0 <= h_hat <= epsilon} inside the bounding box.

    Deterministic for a given seed: rejection sampling over the box keeps
    candidates inside the band, then a bisection pass along random rays
    refines extra points down to h_hat in [0, epsilon/10] so the check
    functions see genuinely near-boundary states.  Afterwards each
    constraint whose active region was missed gets a targeted search.
    """
    box = _require_box(cs)
    epsilon = float(epsilon)
    if epsilon <= 0.0:
        raise DomainError(f"epsilon must be positive, got {epsilon}")
    if density <= 0.0:
        raise DomainError(f"density must be positive, got {density}")
    rng = np.random.default_rng(seed)
    volume = float(np.prod(box[:, 1] - box[:, 0]))
    n_cand = max(512, int(math.ceil(density * volume)))

    cand = rng.uniform(box[:, 0], box[:, 1], size=(n_cand, cs.n))
    vals, _ = cs.evaluate_batch(cand)
    h_hat = vals.min(axis=1)
    band = (h_hat >= 0.0) & (h_hat <= epsilon)
    accepted = cand[band]

    # boundary refinement: from interior points, march random rays until the
    # set is left, then bisect the crossing back into [0, eps/10]
    refined = np.empty((0, cs.n))
    interior = cand[h_hat > 0.0]
    if interior.shape[0] > 0:
        n_rays = min(interior.shape[0], max(32, n_cand // 16))
        starts = interior[rng.choice(interior.shape[0], size=n_rays, replace=False)]
        dirs = rng.normal(size=(n_rays, cs.n))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        scale = float(np.linalg.norm(box[:, 1] - box[:, 0]))
        inside = starts.copy()
        outside = np.full_like(starts, np.nan)
        found = np.zeros(n_rays, dtype=bool)
        dead = np.zeros(n_rays, dtype=bool)
        step = 0.05 * scale
        probe = starts.copy()
        for _ in range(40):
            live = ~found & ~dead
            if not live.any():
                break
            probe = probe + step * dirs
            in_box = np.all((probe >= box[:, 0]) & (probe <= box[:, 1]), axis=1)
            h_probe = cs.min_values(probe)
            crossed = live & (h_probe < 0.0)
            outside[crossed] = probe[crossed]
            found |= crossed
            still_in = live & ~crossed & (h_probe >= 0.0) & in_box
            inside[still_in] = probe[still_in]
            # rays that leave the box before leaving the set are abandoned
            dead |= live & ~crossed & ~in_box
        ok = found & np.all(np.isfinite(outside), axis=1)
        if ok.any():
            pts, conv = _bisect_to_band(cs, inside[ok], outside[ok], 0.0, epsilon / 10.0)
            refined = pts[conv]

    samples = np.vstack([accepted, refined]) if refined.size else accepted
    if samples.shape[0] == 0:
        raise EmptyTubeError(
            "no samples with 0 <= min-constraint <= epsilon found; the safe set "
            "may be empty or the bounding box misplaced"
        )

    # per-constraint coverage of the argmin regions, with a targeted retry
    # for constraints the random pass missed
    vals_s, _ = cs.evaluate_batch(samples)
    coverage = np.zeros(cs.N, dtype=bool)
    coverage[np.unique(vals_s.argmin(axis=1))] = True
    extra = []
    if not coverage.all():
        argmin_c = vals.argmin(axis=1)
        for i in np.flatnonzero(~coverage):
            owned = cand[(argmin_c == i) & (h_hat > epsilon)]
            if owned.shape[0] == 0:
                continue
            owned = owned[: min(16, owned.shape[0])]
            out_pool = cand[h_hat < 0.0]
            if out_pool.shape[0] == 0:
                continue
            outs = out_pool[rng.choice(out_pool.shape[0], size=owned.shape[0])]
            pts, conv = _bisect_to_band(cs, owned, outs, 0.0, epsilon)
            if conv.any():
                pts = pts[conv]
                v_p, _ = cs.evaluate_batch(pts)
                hit = v_p.argmin(axis=1) == i
                if hit.any():
                    extra.append(pts[hit][:4])
                    coverage[i] = True
    if extra:
        samples = np.vstack([samples] + extra)

    return TubeSpec(epsilon, samples, float(density), coverage, int(seed))


def estimate_bounds(
    cs: ConstraintSet,
    F: VectorField,
    tube: TubeSpec,
    tol: Optional[float] = None,
) -> CompactBounds:
    """Measure the certificate constants M, r, d over the tube samples.

    `tol` is the activity tolerance; None means the value-scaled default.
    Raises NotStrictlySafeError (naming the witness sample and constraint)
    as soon as an active constraint has a nonpositive Lie derivative, since
    that contradicts strict inward flow on the boundary.
    """
    if len(tube) == 0:
        raise InvalidInputError("tube has no samples")
    X = tube.samples
    vals, grads = cs.evaluate_batch(X)
    Fx = eval_field(F, X)
    lie = np.einsum("bni,bi->bn", grads, Fx)

    h_hat = vals.min(axis=1)
    if tol is None:
        tol_row = 1e-8 * (1.0 + np.abs(h_hat))
    else:
        tol_row = np.full(X.shape[0], float(tol))
    gaps = vals - h_hat[:, None]
    active = gaps <= tol_row[:, None]

    M = float(np.abs(lie).max())
    lie_active = np.where(active, lie, np.inf)
    r_per = lie_active.min(axis=1)
    r = float(r_per.min())
    if r <= 0.0:
        b = int(r_per.argmin())
        i = int(lie_active[b].argmin())
        raise NotStrictlySafeError(
            f"active constraint {i} has Lie derivative {lie[b, i]:.6g} <= 0 at "
            f"sample {X[b].tolist()} (strict inward flow violated)",
            point=X[b].copy(),
            constraint=i,
            lie_value=float(lie[b, i]),
        )
    gaps_inactive = np.where(~active, gaps, np.inf)
    d = float(gaps_inactive.min())
    return CompactBounds(M=M, r=r, d=d, epsilon=tube.epsilon, n_samples=X.shape[0])


@dataclass(frozen=True)
class MFCQEntry:
    point: np.ndarray
    active: tuple
    ok: bool
    witness: Optional[np.ndarray]
    violating_pair: Optional[tuple]
    margin: float


@dataclass(frozen=True)
class MFCQReport:
    passed: bool
    n_checked: int
    entries: tuple

    @property
    def failures(self) -> tuple:
        return tuple(e for e in self.entries if not e.ok)


def _mfcq_witness(grads: np.ndarray, margin: float = 1e-9, sweeps: int = 50):
    """Search for a direction v with grad_i . v > 0 for all rows.

    First guess: the sum of normalized gradients.  Fallback: a few sweeps
    of projections onto the violated half-spaces.  Returns (v, ok, margin)
    where margin is min_i grad_i . v / |grad_i|.
    """
    norms = np.linalg.norm(grads, axis=1)
    if np.any(norms == 0.0):
        return None, False, -np.inf
    unit = grads / norms[:, None]
    v = unit.sum(axis=0)

    def rel_margin(v):
        return float((unit @ v).min())

    if rel_margin(v) > margin:
        return v, True, rel_margin(v)
    for _ in range(sweeps):
        dots = unit @ v
        j = int(dots.argmin())
        if dots[j] > margin:
            break
        v = v + (2.0 * margin - dots[j]) * unit[j]
    m = rel_margin(v)
    return v, m > 0.0, m


def check_mfcq(cs: ConstraintSet, tube: TubeSpec, tol: Optional[float] = None) -> MFCQReport:
    """Constraint-qualification check at the near-boundary tube samples.

    At each sample with h_hat close to zero, looks for a common ascent
    direction for all active gradients.  Failure means two active gradients
    point in (nearly) opposite directions, i.e. the boundary has a
    degenerate kink there.
    """
    if len(tube) == 0:
        raise InvalidInputError("tube has no samples")
    X = tube.samples
    vals, grads = cs.evaluate_batch(X)
    h_hat = vals.min(axis=1)
    near = h_hat <= tube.epsilon / 10.0
    if not near.any():
        order = np.argsort(h_hat)
        near = np.zeros(X.shape[0], dtype=bool)
        near[order[: min(10, X.shape[0])]] = True

    entries = []
    for b in np.flatnonzero(near):
        tol_b = default_activity_tolerance(h_hat[b]) if tol is None else float(tol)
        act = np.flatnonzero(vals[b] - h_hat[b] <= tol_b)
        g_act = grads[b][act]
        v, ok, margin = _mfcq_witness(g_act)
        pair = None
        if not ok and len(act) >= 2:
            unit = g_act / np.linalg.norm(g_act, axis=1, keepdims=True)
            cos = unit @ unit.T
            i, j = divmod(int(np.argmin(cos)), len(act))
            pair = (int(act[i]), int(act[j]))
        entries.append(
            MFCQEntry(
                point=X[b].copy(),
                active=tuple(int(i) for i in act),
                ok=bool(ok),
                witness=None if v is None else np.asarray(v, dtype=float),
                violating_pair=pair,
                margin=margin,
            )
        )
    passed = all(e.ok for e in entries)
    return MFCQReport(passed=passed, n_checked=len(entries), entries=tuple(entries))


def shrink_epsilon_until_safe(
    cs: ConstraintSet,
    F: VectorField,
    epsilon: float,
    density: float,
    seed: int,
    tol: Optional[float] = None,
    max_halvings: int = 12,
):
    """Halve epsilon until the sampled bounds come out strictly safe.

    Returns (epsilon, tube, bounds) for the first width that works.
    Mirrors the usual 'pick the band small enough' argument, realized on
    samples.
    """
    eps = float(epsilon)
    last_err = None
    for _ in range(max_halvings + 1):
        try:
            tube = sample_tube(cs, eps, density, seed)
            bounds = estimate_bounds(cs, F, tube, tol)
            return eps, tube, bounds
        except (NotStrictlySafeError, EmptyTubeError) as err:
            last_err = err
            eps *= 0.5
    raise NotStrictlySafeError(
        f"no strictly safe band found down to epsilon={eps:.3g}: {last_err}"
    )
