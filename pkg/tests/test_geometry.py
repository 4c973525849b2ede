import numpy as np
import pytest

from softcbf import (
    CompactBounds,
    ConstraintSet,
    EmptyTubeError,
    InvalidCertificateError,
    InvalidInputError,
    NotStrictlySafeError,
    TubeSpec,
    check_mfcq,
    estimate_bounds,
    sample_tube,
    shrink_epsilon_until_safe,
)
from softcbf.geometry import eval_field


def single_constraint_set(fn, n, box):
    return ConstraintSet(n=n, evaluators=(fn,), bounding_box=np.asarray(box, dtype=float))


def unit_disk():
    def ev(x):
        return float(1.0 - x @ x), -2.0 * np.asarray(x, dtype=float)

    return single_constraint_set(ev, 2, [[-1.2, 1.2], [-1.2, 1.2]])


def box_faces():
    # |x1| <= 1, |x2| <= 1 as four affine constraints
    W = np.array([[-1.0, 0.0], [1.0, 0.0], [0.0, -1.0], [0.0, 1.0]])
    b = np.ones(4)

    def make(i):
        def ev(x):
            return float(b[i] + W[i] @ x), W[i].copy()

        return ev

    return ConstraintSet(
        n=2,
        evaluators=tuple(make(i) for i in range(4)),
        bounding_box=np.array([[-1.3, 1.3], [-1.3, 1.3]]),
    )


def scalar_set():
    def h1(x):
        return float(1.0 - x[0] ** 2), np.array([-2.0 * x[0]])

    return single_constraint_set(h1, 1, [[-1.2, 1.2]])


def test_constraint_set_validation():
    with pytest.raises(InvalidInputError):
        ConstraintSet(n=0, evaluators=(lambda x: (0.0, np.zeros(1)),))
    with pytest.raises(InvalidInputError):
        ConstraintSet(n=1, evaluators=())
    with pytest.raises(InvalidInputError):
        ConstraintSet(
            n=1, evaluators=(lambda x: (0.0, np.zeros(1)),), bounding_box=[[1.0, -1.0]]
        )


def test_sample_tube_disk_band():
    cs = unit_disk()
    tube = sample_tube(cs, 0.1, 800.0, seed=0)
    h = cs.min_values(tube.samples)
    assert len(tube) > 50
    assert np.all(h >= 0.0)
    assert np.all(h <= 0.1)
    assert tube.constraint_coverage.all()


def test_sample_tube_box_band_and_coverage():
    cs = box_faces()
    tube = sample_tube(cs, 0.05, 2000.0, seed=1)
    h = cs.min_values(tube.samples)
    assert np.all((h >= 0.0) & (h <= 0.05))
    # every face's active region is represented
    assert tube.constraint_coverage.all()


def test_sample_tube_empty_set_raises():
    def ev(x):
        return float(-1.0 - x @ x), -2.0 * np.asarray(x, dtype=float)

    cs = single_constraint_set(ev, 2, [[-1.0, 1.0], [-1.0, 1.0]])
    with pytest.raises(EmptyTubeError):
        sample_tube(cs, 0.1, 500.0, seed=0)


def test_sample_tube_requires_box_and_valid_params():
    cs = ConstraintSet(n=1, evaluators=(lambda x: (1.0, np.zeros(1)),))
    with pytest.raises(InvalidInputError):
        sample_tube(cs, 0.1, 100.0, 0)
    disk = unit_disk()
    with pytest.raises(Exception):
        sample_tube(disk, -0.1, 100.0, 0)
    with pytest.raises(Exception):
        sample_tube(disk, 0.1, 0.0, 0)


def test_sample_tube_deterministic_for_seed():
    cs = unit_disk()
    a = sample_tube(cs, 0.1, 500.0, seed=7)
    b = sample_tube(cs, 0.1, 500.0, seed=7)
    np.testing.assert_array_equal(a.samples, b.samples)
    c = sample_tube(cs, 0.1, 500.0, seed=8)
    assert a.samples.shape != c.samples.shape or not np.allclose(a.samples, c.samples)


def test_estimate_bounds_stable_scalar():
    # contraction toward the origin keeps the parabola-bounded interval safe:
    # the analytic Lie derivative at the band is 2 x^2 (about 2 near |x| = 1)
    cs = scalar_set()
    tube = sample_tube(cs, 0.05, 3000.0, seed=0)
    bounds = estimate_bounds(cs, lambda x: -np.atleast_2d(x) if np.ndim(x) > 1 else -x, tube)
    assert bounds.r == pytest.approx(2.0, rel=0.1)
    assert bounds.M == pytest.approx(2.0, rel=0.1)
    assert bounds.M >= bounds.r > 0
    assert bounds.d == np.inf  # single constraint: nothing is ever inactive


def test_estimate_bounds_unstable_scalar_raises_with_witness():
    cs = scalar_set()
    tube = sample_tube(cs, 0.05, 3000.0, seed=0)
    with pytest.raises(NotStrictlySafeError) as err:
        estimate_bounds(cs, lambda x: np.asarray(x, dtype=float), tube)
    assert err.value.point is not None
    assert err.value.constraint == 0
    assert err.value.lie_value < 0


def test_estimate_bounds_box_gap():
    cs = box_faces()
    tube = sample_tube(cs, 0.02, 4000.0, seed=0)

    def F(x):
        return -np.asarray(x, dtype=float)

    bounds = estimate_bounds(cs, F, tube)
    # faces see inward rate about 2|x_i| around 1; gaps can close near corners
    assert 0 < bounds.r <= 2.1
    assert bounds.M <= 2.2 * 1.3
    assert 0 < bounds.d < 2.0


def test_bounds_exact_replay():
    # the stored constants must reproduce exactly when re-derived from the
    # same samples
    cs = box_faces()
    tube = sample_tube(cs, 0.05, 1500.0, seed=3)

    def F(x):
        return -np.asarray(x, dtype=float)

    b1 = estimate_bounds(cs, F, tube)
    b2 = estimate_bounds(cs, F, tube)
    assert (b1.M, b1.r, b1.d) == (b2.M, b2.r, b2.d)


def test_bounds_monotone_under_nested_tube():
    cs = box_faces()

    def F(x):
        return -np.asarray(x, dtype=float)

    tube = sample_tube(cs, 0.08, 3000.0, seed=5)
    h = cs.min_values(tube.samples)
    inner = TubeSpec(0.04, tube.samples[h <= 0.04], tube.sampling_density)
    outer_bounds = estimate_bounds(cs, F, tube)
    inner_bounds = estimate_bounds(cs, F, inner)
    assert inner_bounds.r >= outer_bounds.r
    assert inner_bounds.d >= outer_bounds.d


def test_compact_bounds_invariants():
    with pytest.raises(InvalidCertificateError):
        CompactBounds(M=1.0, r=-0.5, d=1.0, epsilon=0.1, n_samples=10)
    with pytest.raises(InvalidCertificateError):
        CompactBounds(M=0.1, r=0.5, d=1.0, epsilon=0.1, n_samples=10)
    with pytest.raises(InvalidCertificateError):
        CompactBounds(M=1.0, r=0.5, d=0.0, epsilon=0.1, n_samples=10)


def test_mfcq_single_gradient_passes():
    cs = unit_disk()
    tube = sample_tube(cs, 0.1, 600.0, seed=0)
    report = check_mfcq(cs, tube)
    assert report.passed
    assert report.n_checked > 0
    assert all(e.witness is not None for e in report.entries)


def test_mfcq_orthogonal_gradients_pass():
    cs = box_faces()
    tube = sample_tube(cs, 0.05, 2000.0, seed=2)
    report = check_mfcq(cs, tube, tol=0.2)
    assert report.passed


def test_mfcq_opposed_gradients_fail():
    # antiparallel active gradients admit no common ascent direction
    def outer(x):
        return float(1.0 - x @ x), -2.0 * np.asarray(x, dtype=float)

    def inner(x):
        return float(x @ x - 0.95), 2.0 * np.asarray(x, dtype=float)

    cs = ConstraintSet(
        n=2,
        evaluators=(outer, inner),
        bounding_box=np.array([[-1.1, 1.1], [-1.1, 1.1]]),
    )
    tube = sample_tube(cs, 0.01, 4000.0, seed=0)
    report = check_mfcq(cs, tube, tol=0.2)
    assert not report.passed
    bad = report.failures[0]
    assert bad.violating_pair == (0, 1) or bad.violating_pair == (1, 0)


def test_shrink_epsilon_helper():
    # a field that is only inward very close to the boundary: outside a thin
    # shell it pushes outward, so wide bands must fail and narrow ones pass
    def ev(x):
        return float(1.0 - x @ x), -2.0 * np.asarray(x, dtype=float)

    cs = single_constraint_set(ev, 2, [[-1.2, 1.2], [-1.2, 1.2]])

    def F(x):
        X = np.atleast_2d(np.asarray(x, dtype=float))
        r2 = np.einsum("bi,bi->b", X, X)
        out = X * (0.9 - r2)[:, None] * 10.0
        return out[0] if np.asarray(x).ndim == 1 else out

    eps, tube, bounds = shrink_epsilon_until_safe(cs, F, 0.4, 2000.0, seed=0)
    assert eps < 0.4
    assert bounds.r > 0


def test_eval_field_handles_single_state_functions():
    def F(x):
        x = np.asarray(x, dtype=float)
        if x.ndim != 1:
            raise TypeError("single states only")
        return -x

    X = np.arange(6.0).reshape(3, 2)
    np.testing.assert_allclose(eval_field(F, X), -X)
