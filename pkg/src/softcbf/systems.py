"""Benchmark systems with analytic structure for oracle checks.

All dynamics callables accept a single state of shape (n,) or a block of
shape (B, n); constraint families ship a batch evaluator.  Numeric
constants (LQR gain and cost-to-go matrix for the pendulum backup
controller) are frozen in the source for cross-platform determinism; see
scripts/derive_pendulum_lqr.py for the one-off derivation.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .backup import BackupProblem, slice_constraint_set
from .errors import InvalidInputError
from .geometry import ConstraintSet
from .safety_filter import ControlAffineSystem

__all__ = [
    "Benchmark",
    "double_integrator_box",
    "pendulum_backup",
    "scalar_stable",
    "scalar_unstable",
    "thin_annulus",
    "get_benchmark",
    "benchmark_names",
]


@dataclass(frozen=True)
class Benchmark:
    """A named system with a constraint family, a desired (possibly unsafe)
    controller for the filter to correct, and a safe controller whose
    closed loop carries the certification."""

    name: str
    sys: ControlAffineSystem
    constraints: ConstraintSet
    desired_controller: Callable
    safe_controller: Callable
    x0_default: np.ndarray
    backup: Optional[BackupProblem] = None
    analytic: Optional[dict] = None
    # (n, seed) -> states used by the backup precondition checks; should
    # place points on the relevant boundaries plus a spread over the box
    precondition_sampler: Optional[Callable] = None
    # band width and sampling density that work well for this benchmark;
    # the band must be thin relative to the smallest constraint scale
    cert_epsilon: float = 0.1
    cert_density: float = 2000.0
    # False for benchmarks that exist to exercise failure paths
    certifiable: bool = True

    def closed_loop_field(self) -> Callable:
        """Vector field under the safe controller, batched."""
        sys = self.sys
        k = self.safe_controller

        def F(x):
            x = np.asarray(x, dtype=float)
            single = x.ndim == 1
            X = np.atleast_2d(x)
            u = np.atleast_2d(np.asarray(k(X), dtype=float))
            if u.shape != (X.shape[0], sys.m):
                u = np.stack([np.asarray(k(xi), dtype=float).reshape(sys.m) for xi in X])
            f0 = np.asarray(sys.drift(X), dtype=float)
            g = np.asarray(sys.actuation(X), dtype=float)
            out = f0 + np.einsum("bij,bj->bi", g, u)
            return out[0] if single else out

        return F

    def certification_set(self) -> ConstraintSet:
        """Constraint family the certificate is computed on: the slice
        constraints for backup benchmarks, the plain family otherwise."""
        if self.backup is not None:
            return slice_constraint_set(self.backup)
        return self.constraints

    @property
    def certification_N(self) -> int:
        return self.backup.N if self.backup is not None else self.constraints.N


def _affine_constraints(W: np.ndarray, b: np.ndarray, box) -> ConstraintSet:
    """Family h_i(x) = b_i + W_i . x with constant gradients W_i."""
    W = np.asarray(W, dtype=float)
    b = np.asarray(b, dtype=float)
    N, n = W.shape

    def batch(X):
        X = np.atleast_2d(X)
        vals = b[None, :] + X @ W.T
        grads = np.broadcast_to(W, (X.shape[0], N, n)).copy()
        return vals, grads

    def make_eval(i):
        def ev(x):
            return float(b[i] + W[i] @ np.asarray(x, dtype=float)), W[i].copy()

        return ev

    return ConstraintSet(
        n=n,
        evaluators=tuple(make_eval(i) for i in range(N)),
        bounding_box=np.asarray(box, dtype=float),
        batch_evaluator=batch,
    )


def _const_actuation(gmat: np.ndarray) -> Callable:
    gmat = np.asarray(gmat, dtype=float)

    def g(x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return gmat
        return np.broadcast_to(gmat, (x.shape[0],) + gmat.shape)

    return g


# ---------------------------------------------------------------------------
# double integrator in a sheared box
# ---------------------------------------------------------------------------

def double_integrator_box() -> Benchmark:
    """Double integrator (position p, velocity v, xdot = [v, u]) kept in a
    compact box written in the sheared coordinates (p + v, v):

        |p + v| <= 1,   |v| <= 1.5.

    Under the safe controller u = -p - 2v the shear coordinate s = p + v
    obeys sdot = -s, so every face of the box has a strictly positive
    inward margin (0.5 on the velocity faces, 1 on the shear faces).  An
    axis-aligned position-velocity box cannot be strictly inward for a
    double integrator: on the face p = 1 with v > 0 the position keeps
    growing no matter the input, so the shear is essential.

    The desired controller tracks a setpoint outside the box to force
    filter activity.
    """

    def drift(x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        out = np.stack([X[:, 1], np.zeros(X.shape[0])], axis=-1)
        return out[0] if single else out

    sys = ControlAffineSystem(n=2, m=1, drift=drift, actuation=_const_actuation([[0.0], [1.0]]))

    W = np.array([[-1.0, -1.0], [1.0, 1.0], [0.0, -1.0], [0.0, 1.0]])
    b = np.array([1.0, 1.0, 1.5, 1.5])
    constraints = _affine_constraints(W, b, [[-2.6, 2.6], [-1.6, 1.6]])

    def safe(x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        u = -(X[:, 0] + 2.0 * X[:, 1])
        return (u[0:1] if single else u[:, None])

    def desired(x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        u = -3.0 * (X[:, 0] - 3.0) - 3.0 * X[:, 1]
        return (u[0:1] if single else u[:, None])

    def closed_loop(x):
        X = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.stack([X[:, 1], -(X[:, 0] + 2.0 * X[:, 1])], axis=-1)
        return out[0] if np.asarray(x).ndim == 1 else out

    def lie_rows(x):
        # per-constraint Lie derivatives under the safe closed loop
        X = np.atleast_2d(np.asarray(x, dtype=float))
        s = X[:, 0] + X[:, 1]
        pv = X[:, 0] + 2.0 * X[:, 1]
        return np.stack([s, -s, pv, -pv], axis=-1)

    return Benchmark(
        name="double-integrator-box",
        sys=sys,
        constraints=constraints,
        desired_controller=desired,
        safe_controller=safe,
        x0_default=np.zeros(2),
        analytic={"closed_loop": closed_loop, "lie_rows": lie_rows},
        cert_epsilon=0.05,
        cert_density=2000.0,
    )


# ---------------------------------------------------------------------------
# inverted pendulum with an LQR backup controller
# ---------------------------------------------------------------------------

# LQR for the upright linearization (A = [[0,1],[1,0]], B = [[0],[1]],
# Q = diag(2,1), R = 1), frozen from a one-off Riccati solve:
PENDULUM_P = np.array(
    [
        [4.4036694750416094, 2.7320508075688759],
        [2.7320508075688759, 2.5424597568374119],
    ]
)
PENDULUM_K = np.array([2.7320508075688759, 2.5424597568374119])
PENDULUM_U_MAX = 3.0
PENDULUM_HB_LEVEL = 0.05
# shear of the safe-set coordinates; keeps the inward-flow condition
# non-degenerate where the boundary crosses the zero-velocity axis
PENDULUM_SHEAR = 0.4


def pendulum_backup() -> Benchmark:
    """Inverted pendulum near the upright: angle a, rate w, with
    adot = w, wdot = sin(a) + u and |u| <= 3.

    Safe set: a box-like quartic region with half-widths (1.0, 1.5) in the
    sheared coordinates (a + 0.4 w, w); the shear keeps the boundary
    strictly controllable everywhere (an unsheared box has boundary points
    on the zero-velocity axis where the angle cannot move at first order,
    so no controller achieves a strict inward margin there).  Backup
    controller: saturated LQR pulling to the upright; terminal set: a
    sublevel set of the LQR cost-to-go.  Horizon 2.0 sliced at 0.2 gives
    11 slice constraints.
    """

    def drift(x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        out = np.stack([X[:, 1], np.sin(X[:, 0])], axis=-1)
        return out[0] if single else out

    sys = ControlAffineSystem(
        n=2,
        m=1,
        drift=drift,
        actuation=_const_actuation([[0.0], [1.0]]),
        input_box=np.array([[-PENDULUM_U_MAX, PENDULUM_U_MAX]]),
    )

    c = PENDULUM_SHEAR

    def h(x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        z = X[:, 0] + c * X[:, 1]
        w = X[:, 1]
        val = 1.0 - z**4 - (w / 1.5) ** 4
        grad = np.stack([-4.0 * z**3, -4.0 * c * z**3 - 4.0 * w**3 / 1.5**4], axis=-1)
        return (float(val[0]), grad[0]) if single else (val, grad)

    def h_b(x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        val = PENDULUM_HB_LEVEL - np.einsum("bi,ij,bj->b", X, PENDULUM_P, X)
        grad = -2.0 * X @ PENDULUM_P
        return (float(val[0]), grad[0]) if single else (val, grad)

    def k_b(x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        u = PENDULUM_U_MAX * np.tanh(-(X @ PENDULUM_K) / PENDULUM_U_MAX)
        return u[0:1] if single else u[:, None]

    def jac_closed_loop(x):
        # d/dx [w, sin(a) + umax*tanh(-K.x/umax)]
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        B = X.shape[0]
        J = np.zeros((B, 2, 2))
        J[:, 0, 1] = 1.0
        J[:, 1, 0] = np.cos(X[:, 0])
        sech2 = 1.0 / np.cosh((X @ PENDULUM_K) / PENDULUM_U_MAX) ** 2
        J[:, 1, :] -= sech2[:, None] * PENDULUM_K[None, :]
        return J[0] if single else J

    box = np.array([[-1.7, 1.7], [-1.6, 1.6]])
    backup = BackupProblem(
        sys=sys,
        k_b=k_b,
        h=h,
        h_b=h_b,
        T=2.0,
        dtau=0.2,
        jacobian=jac_closed_loop,
        bounding_box=box,
    )

    def h_eval(x):
        v, g = h(np.asarray(x, dtype=float))
        return v, g

    def batch(X):
        v, g = h(np.atleast_2d(np.asarray(X, dtype=float)))
        return v[:, None], g[:, None, :]

    constraints = ConstraintSet(
        n=2, evaluators=(h_eval,), bounding_box=box, batch_evaluator=batch
    )

    def desired(x):
        # constant maximal push away from upright
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return np.array([PENDULUM_U_MAX])
        return np.full((x.shape[0], 1), PENDULUM_U_MAX)

    chol = np.linalg.cholesky(PENDULUM_P)

    def precondition_samples(n: int, seed: int) -> np.ndarray:
        """Exact points on the terminal and safe-set boundaries plus a
        uniform spread over the operating box."""
        rng = np.random.default_rng(seed)
        n_sb = n // 3
        n_s = n // 3
        n_box = n - n_sb - n_s
        psi = rng.uniform(0.0, 2.0 * np.pi, n_sb)
        circ = np.stack([np.cos(psi), np.sin(psi)], axis=-1)
        on_sb = np.sqrt(PENDULUM_HB_LEVEL) * np.linalg.solve(chol.T, circ.T).T
        t = rng.uniform(0.0, 2.0 * np.pi, n_s)
        z = np.sign(np.cos(t)) * np.abs(np.cos(t)) ** 0.5
        w = 1.5 * np.sign(np.sin(t)) * np.abs(np.sin(t)) ** 0.5
        on_s = np.stack([z - c * w, w], axis=-1)
        in_box = rng.uniform(box[:, 0], box[:, 1], size=(n_box, 2))
        return np.vstack([on_sb, on_s, in_box])

    return Benchmark(
        name="pendulum-backup",
        sys=sys,
        constraints=constraints,
        desired_controller=desired,
        safe_controller=k_b,
        x0_default=np.zeros(2),
        backup=backup,
        precondition_sampler=precondition_samples,
        cert_epsilon=0.005,
        cert_density=1500.0,
    )


# ---------------------------------------------------------------------------
# scalar systems with closed-form oracles
# ---------------------------------------------------------------------------

def _scalar_benchmark(name: str, stable: bool) -> Benchmark:
    sign = -1.0 if stable else 1.0

    def drift(x):
        return sign * np.asarray(x, dtype=float)

    sys = ControlAffineSystem(n=1, m=1, drift=drift, actuation=_const_actuation([[1.0]]))
    constraints = _affine_constraints(
        np.array([[-1.0], [1.0]]), np.array([1.0, 1.0]), [[-1.3, 1.3]]
    )

    def safe(x):
        x = np.asarray(x, dtype=float)
        return np.zeros(1) if x.ndim == 1 else np.zeros((x.shape[0], 1))

    def desired(x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        u = -1.5 * (X[:, 0] - 2.0)
        return u[0:1] if single else u[:, None]

    analytic = None
    if stable:
        analytic = {
            "flow": lambda x, t: np.asarray(x, dtype=float) * np.exp(-t),
            "sensitivity": lambda t: np.exp(-t),
            # under u = 0: L h1 = x, L h2 = -x
            "lie_rows": lambda x: np.stack(
                [np.atleast_1d(np.asarray(x, dtype=float))[..., 0],
                 -np.atleast_1d(np.asarray(x, dtype=float))[..., 0]],
                axis=-1,
            ),
        }

    return Benchmark(
        name=name,
        sys=sys,
        constraints=constraints,
        desired_controller=desired,
        safe_controller=safe,
        x0_default=np.zeros(1),
        analytic=analytic,
        certifiable=stable,
    )


def scalar_stable() -> Benchmark:
    """xdot = -x + u on the interval [-1, 1]; with u = 0 the flow, its
    sensitivity, and every Lie derivative have one-line closed forms."""
    return _scalar_benchmark("scalar-stable", stable=True)


def scalar_unstable() -> Benchmark:
    """xdot = +x + u: the same interval is not strictly safe under u = 0
    (the boundary is repelled outward); used to exercise failure paths."""
    return _scalar_benchmark("scalar-unstable", stable=False)


# ---------------------------------------------------------------------------
# thin annulus: strictly safe but degenerate constraint geometry
# ---------------------------------------------------------------------------

def thin_annulus(width: float = 0.05) -> Benchmark:
    """Annulus 1 - width <= |x|^2 <= 1 for a single integrator.

    The two constraint gradients are antiparallel everywhere, so any
    activity tolerance wide enough to see both constraints at once makes
    the constraint-qualification check fail; the safe controller still
    keeps the band strictly inward by pushing toward the middle circle.
    """
    if not 0 < width < 1:
        raise InvalidInputError("width must be in (0, 1)")

    def drift(x):
        x = np.asarray(x, dtype=float)
        return np.zeros_like(x)

    sys = ControlAffineSystem(n=2, m=2, drift=drift, actuation=_const_actuation(np.eye(2)))

    def batch(X):
        X = np.atleast_2d(X)
        r2 = np.einsum("bi,bi->b", X, X)
        vals = np.stack([1.0 - r2, r2 - (1.0 - width)], axis=-1)
        grads = np.stack([-2.0 * X, 2.0 * X], axis=1)
        return vals, grads

    def ev_outer(x):
        x = np.asarray(x, dtype=float)
        return float(1.0 - x @ x), -2.0 * x

    def ev_inner(x):
        x = np.asarray(x, dtype=float)
        return float(x @ x - (1.0 - width)), 2.0 * x

    constraints = ConstraintSet(
        n=2,
        evaluators=(ev_outer, ev_inner),
        bounding_box=np.array([[-1.1, 1.1], [-1.1, 1.1]]),
        batch_evaluator=batch,
    )

    mid = 1.0 - 0.5 * width

    def safe(x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        r2 = np.einsum("bi,bi->b", X, X)
        u = -4.0 * X * (r2 - mid)[:, None]
        return u[0] if single else u

    def desired(x):
        # adversarial radial push toward the outer ring
        x = np.asarray(x, dtype=float)
        return 2.0 * x

    return Benchmark(
        name="thin-annulus",
        sys=sys,
        constraints=constraints,
        desired_controller=desired,
        safe_controller=safe,
        # start in the outer half of the band: on the middle circle the two
        # antiparallel gradients cancel and the smooth barrier goes locally
        # flat, so a sampled-data run from there can cross the band before
        # the filter has any leverage
        x0_default=np.array([0.995**0.5, 0.0]),
        cert_epsilon=0.01,
        cert_density=3000.0,
    )


_REGISTRY = {
    "double-integrator-box": double_integrator_box,
    "pendulum-backup": pendulum_backup,
    "scalar-stable": scalar_stable,
    "scalar-unstable": scalar_unstable,
    "thin-annulus": thin_annulus,
}


def benchmark_names() -> list[str]:
    return sorted(_REGISTRY)


def get_benchmark(name: str) -> Benchmark:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise InvalidInputError(
            f"unknown benchmark {name!r}; available: {', '.join(benchmark_names())}"
        ) from None
    return factory()
