import numpy as np
import pytest

from softcbf import (
    InvalidInputError,
    benchmark_names,
    double_integrator_box,
    get_benchmark,
    integrate_flow,
    pendulum_backup,
    scalar_stable,
    thin_annulus,
)
from softcbf.systems import PENDULUM_HB_LEVEL, PENDULUM_K, PENDULUM_P


def test_registry():
    names = benchmark_names()
    assert {"double-integrator-box", "pendulum-backup", "scalar-stable"} <= set(names)
    for name in names:
        bench = get_benchmark(name)
        assert bench.name == name
        assert bench.constraints.n == bench.sys.n
    with pytest.raises(InvalidInputError):
        get_benchmark("no-such-benchmark")


def test_double_integrator_geometry():
    bench = double_integrator_box()
    vals, grads = bench.constraints.evaluate(np.zeros(2))
    assert vals.min() == pytest.approx(1.0)  # distance-like margin at the origin
    # at the sheared-box corner both the shear face and the velocity face bind
    corner = np.array([-0.5, 1.5])  # p + v = 1, v = 1.5
    vals, _ = bench.constraints.evaluate(corner)
    active = np.flatnonzero(vals <= 1e-12)
    np.testing.assert_array_equal(active, [0, 2])


def test_double_integrator_closed_loop_lie_rows():
    bench = double_integrator_box()
    F = bench.closed_loop_field()
    rng = np.random.default_rng(0)
    X = rng.uniform(-1.5, 1.5, size=(40, 2))
    _, grads = bench.constraints.evaluate_batch(X)
    lie = np.einsum("bni,bi->bn", grads, F(X))
    np.testing.assert_allclose(lie, bench.analytic["lie_rows"](X), atol=1e-12)
    # on the shear face the inward rate equals the shear coordinate itself
    on_face = np.array([[0.3, 0.7]])  # p + v = 1
    _, g = bench.constraints.evaluate_batch(on_face)
    lie_face = float(np.einsum("ni,i->n", g[0], F(on_face[0]))[0])
    assert lie_face == pytest.approx(1.0)


def test_double_integrator_strict_safety_margins_on_faces():
    # minimum inward rate over each face: 1 on the shear faces, 0.5 on the
    # velocity faces (analytic; hand-checkable from the closed loop)
    bench = double_integrator_box()
    F = bench.closed_loop_field()
    ts = np.linspace(-1, 1, 201)
    # shear faces: p + v = +-1, v free in [-1.5, 1.5]
    for sgn, idx in ((1.0, 0), (-1.0, 1)):
        v = 1.5 * ts
        p = sgn * 1.0 - v
        X = np.stack([p, v], axis=-1)
        _, grads = bench.constraints.evaluate_batch(X)
        lie = np.einsum("bi,bi->b", grads[:, idx, :], F(X))
        assert lie.min() == pytest.approx(1.0, abs=1e-12)
    # velocity faces: v = +-1.5, p + v in [-1, 1]
    for sgn, idx in ((1.0, 2), (-1.0, 3)):
        s = ts
        v = np.full_like(s, sgn * 1.5)
        p = s - v
        X = np.stack([p, v], axis=-1)
        _, grads = bench.constraints.evaluate_batch(X)
        lie = np.einsum("bi,bi->b", grads[:, idx, :], F(X))
        assert lie.min() == pytest.approx(0.5, abs=1e-12)


def test_scalar_benchmark_closed_forms():
    bench = scalar_stable()
    assert bench.analytic is not None
    x = np.array([0.8])
    flow = integrate_flow(
        _as_backup(bench), x
    )
    np.testing.assert_allclose(flow.states[-1], bench.analytic["flow"](x, 1.0), atol=1e-9)
    # Lie rows under u = 0: +x for the upper face, -x for the lower
    np.testing.assert_allclose(bench.analytic["lie_rows"](x), [0.8, -0.8])


def _as_backup(bench):
    # wrap the scalar benchmark's safe closed loop as a backup problem so the
    # shared integrator can be exercised against the analytic flow
    from softcbf import BackupProblem

    def h(x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        val = 1.0 - X[:, 0]
        grad = np.full((X.shape[0], 1), -1.0)
        return (float(val[0]), grad[0]) if single else (val, grad)

    return BackupProblem(
        sys=bench.sys, k_b=bench.safe_controller, h=h, h_b=h, T=1.0, dtau=0.5,
        bounding_box=np.array([[-1.3, 1.3]]),
    )


def test_pendulum_constants_solve_the_design_equations():
    # frozen cost-to-go satisfies the Riccati equation of the upright
    # linearization, and the gain is its input row
    A = np.array([[0.0, 1.0], [1.0, 0.0]])
    B = np.array([[0.0], [1.0]])
    Q = np.diag([2.0, 1.0])
    residual = A.T @ PENDULUM_P + PENDULUM_P @ A - np.outer(PENDULUM_K, PENDULUM_K) + Q
    assert np.abs(residual).max() < 1e-12
    np.testing.assert_allclose(PENDULUM_K, (B.T @ PENDULUM_P)[0], atol=1e-14)
    # cost-to-go is positive definite
    assert np.all(np.linalg.eigvalsh(PENDULUM_P) > 0)


def test_pendulum_backup_setup():
    bench = pendulum_backup()
    prob = bench.backup
    assert prob.N == 11
    # the upright equilibrium is inside the terminal set and stays put
    val, _ = prob.h_b(np.zeros(2))
    assert val == pytest.approx(PENDULUM_HB_LEVEL)
    flow = integrate_flow(prob, np.zeros(2))
    np.testing.assert_allclose(flow.states[-1], np.zeros(2), atol=1e-12)
    # backup controller respects the input box everywhere
    rng = np.random.default_rng(1)
    X = rng.uniform(-3, 3, size=(100, 2))
    u = prob.k_b(X)
    assert np.all(np.abs(u) <= 3.0)
    # the set has the stated half-widths: angle 1.0 on the zero-rate slice,
    # rate 1.5 attained where the sheared coordinate vanishes
    h_val, _ = prob.h(np.array([1.0, 0.0]))
    assert h_val == pytest.approx(0.0, abs=1e-12)
    h_val, _ = prob.h(np.array([-0.6, 1.5]))
    assert h_val == pytest.approx(0.0, abs=1e-12)


def test_pendulum_jacobian_matches_finite_differences():
    bench = pendulum_backup()
    prob = bench.backup
    from softcbf import closed_loop_field

    F = closed_loop_field(prob)
    rng = np.random.default_rng(2)
    for _ in range(10):
        x = rng.uniform(-1.5, 1.5, size=2)
        J = prob.jacobian(x)
        step = 1e-6
        fd = np.empty((2, 2))
        for k in range(2):
            e = np.zeros(2)
            e[k] = step
            fd[:, k] = (F(x + e) - F(x - e)) / (2 * step)
        np.testing.assert_allclose(J, fd, atol=1e-8)


def test_annulus_constraints_and_width():
    bench = thin_annulus()
    x_outer = np.array([1.0, 0.0])
    vals, grads = bench.constraints.evaluate(x_outer)
    assert vals[0] == pytest.approx(0.0)
    assert vals[1] == pytest.approx(0.05)
    np.testing.assert_allclose(grads[0], -grads[1], atol=1e-14)  # antiparallel
