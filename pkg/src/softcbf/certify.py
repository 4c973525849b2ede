"""Smoothing thresholds and their empirical verification.

Two explicit thresholds are computed from sampled (or user-supplied)
constants:

  * theta_tube  = log(N) / epsilon
        puts the zero level set of the smooth minimum inside the band of
        width epsilon around the true boundary;
  * theta_core  = (1/d) * log( N * (r + M) / r )
        makes the inward active contribution dominate the inactive one on
        that band, given the sampled constants M, r, d;
  * theta_tail  = (1/eta_R) * log( (N-1) * (r_inf + C*(1+R)^p) / r_inf )
        does the same on the unbounded part beyond radius R under
        user-supplied growth constants.

The certified threshold is the maximum of the applicable terms.  Above it
the smooth minimum is a valid (extended) control barrier function for the
closed loop the constants were measured on.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DomainError, InvalidCertificateError, InvalidInputError
from .geometry import CompactBounds, ConstraintSet, VectorField, eval_field

__all__ = [
    "TailSpec",
    "ThetaCertificate",
    "VerificationReport",
    "theta_star_compact",
    "theta_star_tail",
    "certify",
    "probe_boundary",
    "verify_certificate",
]


@dataclass(frozen=True)
class TailSpec:
    """Growth constants for the unbounded part beyond radius R.

    eta_at_R: floor on the value gap of inactive constraints at radius R
    (the gap must be nondecreasing in the radius for the guarantee to
    extend outward).  C, p: polynomial envelope C*(1+|x|)^p on inactive
    Lie derivatives.  r_inf: uniform inward floor for active constraints.
    These are trusted inputs; estimating them by sampling an unbounded
    region would be unsound, so the package only ever checks them on a
    finite shell and labels the result accordingly.
    """

    R: float
    eta_at_R: float
    C: float
    p: float
    r_inf: float

    def __post_init__(self):
        if not (self.R > 0 and self.eta_at_R > 0 and self.r_inf > 0):
            raise InvalidCertificateError(
                f"R, eta_at_R, r_inf must be positive, got {self.R}, {self.eta_at_R}, {self.r_inf}"
            )
        if self.C < 0 or self.p < 0:
            raise InvalidCertificateError(f"C and p must be nonnegative, got {self.C}, {self.p}")


@dataclass(frozen=True)
class ThetaCertificate:
    """Certified smoothing threshold and the terms it came from."""

    theta_tube: float
    theta_core: float
    theta_tail: Optional[float]
    theta_star: float
    N: int
    bounds: CompactBounds
    tail: Optional[TailSpec]
    kind: str  # "CBF" for compact sets, "eCBF" when a tail term is present

    def components(self) -> dict:
        out = {"theta_tube": self.theta_tube, "theta_core": self.theta_core}
        if self.theta_tail is not None:
            out["theta_tail"] = self.theta_tail
        return out


def theta_star_compact(bounds: CompactBounds, N: int) -> ThetaCertificate:
    """Threshold for a compact set from sampled band constants.

    With a single constraint smoothing is exact, so the threshold is 0.
    With no inactive constraint anywhere (d = +inf) the core term vanishes
    and only the band-containment term remains.
    """
    N = int(N)
    if N < 1:
        raise InvalidCertificateError(f"N must be >= 1, got {N}")
    if not (bounds.epsilon > 0 and bounds.r > 0):
        raise InvalidCertificateError(
            f"need epsilon > 0 and r > 0, got {bounds.epsilon}, {bounds.r}"
        )
    if N == 1:
        theta_tube = 0.0
        theta_core = 0.0
    else:
        theta_tube = math.log(N) / bounds.epsilon
        if math.isinf(bounds.d):
            theta_core = 0.0
        else:
            theta_core = math.log(N * (bounds.r + bounds.M) / bounds.r) / bounds.d
    return ThetaCertificate(
        theta_tube=theta_tube,
        theta_core=theta_core,
        theta_tail=None,
        theta_star=max(theta_tube, theta_core),
        N=N,
        bounds=bounds,
        tail=None,
        kind="CBF",
    )


def theta_star_tail(tail: TailSpec, N: int) -> float:
    """Threshold term that keeps the tail inward beyond radius R.

    The inactive sum there has at most N-1 terms, so a single constraint
    gives 0 (nothing to dominate).
    """
    N = int(N)
    if N < 1:
        raise InvalidCertificateError(f"N must be >= 1, got {N}")
    if N == 1:
        return 0.0
    grow = tail.r_inf + tail.C * (1.0 + tail.R) ** tail.p
    return math.log((N - 1) * grow / tail.r_inf) / tail.eta_at_R


def certify(bounds: CompactBounds, tail: Optional[TailSpec], N: int) -> ThetaCertificate:
    """Combine the applicable threshold terms into one certificate.

    Without a tail spec this is the compact-set path (kind CBF); with one,
    the result certifies an extended CBF whose relaxation may grow with
    the state norm (kind eCBF).
    """
    base = theta_star_compact(bounds, N)
    if tail is None:
        return base
    t_tail = theta_star_tail(tail, N)
    return ThetaCertificate(
        theta_tube=base.theta_tube,
        theta_core=base.theta_core,
        theta_tail=t_tail,
        theta_star=max(base.theta_tube, base.theta_core, t_tail),
        N=N,
        bounds=bounds,
        tail=tail,
        kind="eCBF",
    )


@dataclass(frozen=True)
class VerificationReport:
    """Outcome of sampling the smooth-minimum zero level set.

    min_lie is the smallest Lie derivative of the smooth minimum over the
    located boundary points; nonpositive witnesses are collected.
    containment_ok states whether every located point kept the pointwise
    minimum inside [0, epsilon].
    """

    theta: float
    epsilon: float
    n_requested: int
    n_located: int
    boundary_found: bool
    min_lie: Optional[float]
    argmin_point: Optional[np.ndarray]
    nonpositive: tuple
    containment_ok: bool
    max_h_hat: Optional[float]
    min_h_hat: Optional[float]

    @property
    def all_positive(self) -> bool:
        return self.boundary_found and self.min_lie is not None and self.min_lie > 0.0


def _softmin_block(vals: np.ndarray, theta: float) -> np.ndarray:
    z = -theta * vals
    zmax = z.max(axis=1, keepdims=True)
    return (-(zmax[:, 0] + np.log(np.sum(np.exp(z - zmax), axis=1))) / theta)


def probe_boundary(
    cs: ConstraintSet,
    F: VectorField,
    theta: float,
    epsilon: float,
    n_check: int,
    seed: int,
    boundary_tol: float = 1e-10,
) -> VerificationReport:
    """Locate points on the zero level set of the smooth minimum and
    evaluate its Lie derivative there.

    Boundary points are found by bisection along random rays from interior
    points (smooth minimum > 0) to exterior points, driven until the inner
    endpoint sits within `boundary_tol` of the level set; the inner
    endpoint is returned so located points never have a negative smooth
    minimum.  No threshold precondition is imposed here, which makes the
    routine usable for sweeps across the threshold; `verify_certificate`
    adds the precondition.
    """
    if not cs.compact_mode:
        raise InvalidInputError("boundary probing requires a bounding box")
    if theta <= 0:
        raise DomainError(f"theta must be positive, got {theta}")
    box = cs.bounding_box
    rng = np.random.default_rng(seed)
    n_check = int(n_check)

    def soft_vals(X):
        vals, _ = cs.evaluate_batch(X)
        return _softmin_block(vals, theta), vals

    # interior pool
    n_pool = max(4 * n_check, 256)
    pool = rng.uniform(box[:, 0], box[:, 1], size=(n_pool, cs.n))
    soft, _ = soft_vals(pool)
    interior = pool[soft > 0.0]
    if interior.shape[0] == 0:
        return VerificationReport(
            theta=float(theta), epsilon=float(epsilon), n_requested=n_check,
            n_located=0, boundary_found=False, min_lie=None, argmin_point=None,
            nonpositive=(), containment_ok=False, max_h_hat=None, min_h_hat=None,
        )

    starts = interior[rng.choice(interior.shape[0], size=n_check, replace=True)]
    dirs = rng.normal(size=(n_check, cs.n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    scale = float(np.linalg.norm(box[:, 1] - box[:, 0]))

    inside = starts.copy()
    outside = np.full_like(starts, np.nan)
    found = np.zeros(n_check, dtype=bool)
    dead = np.zeros(n_check, dtype=bool)
    probe = starts.copy()
    step = 0.04 * scale
    for _ in range(60):
        live = ~found & ~dead
        if not live.any():
            break
        probe = probe + step * dirs
        soft_p, _ = soft_vals(probe)
        in_box = np.all((probe >= box[:, 0] - 0.5 * scale) & (probe <= box[:, 1] + 0.5 * scale), axis=1)
        crossed = live & (soft_p < 0.0)
        outside[crossed] = probe[crossed]
        found |= crossed
        still = live & ~crossed & (soft_p >= 0.0)
        inside[still] = probe[still]
        dead |= live & ~crossed & ~in_box

    if not found.any():
        return VerificationReport(
            theta=float(theta), epsilon=float(epsilon), n_requested=n_check,
            n_located=0, boundary_found=False, min_lie=None, argmin_point=None,
            nonpositive=(), containment_ok=False, max_h_hat=None, min_h_hat=None,
        )

    inb = inside[found]
    outb = outside[found]
    soft_in, _ = soft_vals(inb)
    done = soft_in <= boundary_tol
    for _ in range(100):
        if done.all():
            break
        mid = 0.5 * (inb + outb)
        soft_mid, _ = soft_vals(mid)
        go_in = soft_mid >= 0.0
        upd = ~done
        inb[upd & go_in] = mid[upd & go_in]
        outb[upd & ~go_in] = mid[upd & ~go_in]
        soft_in = np.where(upd & go_in, soft_mid, soft_in)
        done = (soft_in >= 0.0) & (soft_in <= boundary_tol)

    located = inb[done]
    if located.shape[0] == 0:
        return VerificationReport(
            theta=float(theta), epsilon=float(epsilon), n_requested=n_check,
            n_located=0, boundary_found=False, min_lie=None, argmin_point=None,
            nonpositive=(), containment_ok=False, max_h_hat=None, min_h_hat=None,
        )

    vals, grads = cs.evaluate_batch(located)
    Fx = eval_field(F, located)
    # Lie derivative of the smooth minimum: weighted sum of per-constraint rows
    z = -theta * vals
    zmax = z.max(axis=1, keepdims=True)
    e = np.exp(z - zmax)
    w = e / e.sum(axis=1, keepdims=True)
    lie_rows = np.einsum("bni,bi->bn", grads, Fx)
    lie = np.sum(w * lie_rows, axis=1)

    h_hat = vals.min(axis=1)
    bad = lie <= 0.0
    i_min = int(lie.argmin())
    containment_ok = bool(np.all(h_hat >= 0.0) and np.all(h_hat <= epsilon + 1e-9))
    return VerificationReport(
        theta=float(theta),
        epsilon=float(epsilon),
        n_requested=n_check,
        n_located=int(located.shape[0]),
        boundary_found=True,
        min_lie=float(lie[i_min]),
        argmin_point=located[i_min].copy(),
        nonpositive=tuple((located[b].copy(), float(lie[b])) for b in np.flatnonzero(bad)),
        containment_ok=containment_ok,
        max_h_hat=float(h_hat.max()),
        min_h_hat=float(h_hat.min()),
    )


def verify_certificate(
    cs: ConstraintSet,
    F: VectorField,
    cert: ThetaCertificate,
    theta: float,
    n_check: int,
    seed: int,
) -> VerificationReport:
    """Empirically confirm a certificate at a chosen theta above its threshold.

    Samples the zero level set of the smooth minimum, reports the smallest
    Lie derivative found (positive everywhere is the certified prediction)
    and whether every boundary point stayed inside the sampled band.
    """
    if not theta > cert.theta_star:
        raise DomainError(
            f"theta={theta} does not exceed the certified threshold {cert.theta_star}"
        )
    return probe_boundary(cs, F, theta, cert.bounds.epsilon, n_check, seed)
