import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from apbmtrack.ckf import cubature_points, linear_update, measurement_update, marginal_measurement_update, \
    propagate, time_update
from apbmtrack.errors import DimensionError, NumericalError
from apbmtrack.ssm import GaussianBelief, MeasurementModel

from oracles import kalman_filter, linear_gaussian_problem


def random_spd(n, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n, n))
    return a @ a.T + n * 0.1 * np.eye(n)


def test_identity_points():
    pts = cubature_points(GaussianBelief(np.zeros(2), np.eye(2))).points
    r = np.sqrt(2)
    np.testing.assert_allclose(pts, [[r, 0], [0, r], [-r, 0], [0, -r]], atol=1e-15)


def test_diagonal_points():
    pts = cubature_points(GaussianBelief(np.ones(2), np.diag([4.0, 1.0]))).points
    a, b = 2 * np.sqrt(2), np.sqrt(2)
    np.testing.assert_allclose(pts, [[1 + a, 1], [1, 1 + b], [1 - a, 1], [1, 1 - b]], atol=1e-15)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 8))
def test_moment_matching(seed, n):
    P = random_spd(n, seed)
    m = np.random.default_rng(seed + 1).normal(size=n)
    cs = cubature_points(GaussianBelief(m, P))
    assert cs.points.shape == (2 * n, n)
    assert np.max(np.abs(cs.mean() - m)) <= 1e-10 * max(1, np.abs(m).max())
    assert np.linalg.norm(cs.cov() - P) <= 1e-8 * np.linalg.norm(P)


def test_identity_time_update():
    b = GaussianBelief(np.array([1.0, -2.0, 0.5]), random_spd(3, 1))
    out = time_update(cubature_points(b), lambda s: s, np.zeros((3, 3)))
    np.testing.assert_allclose(out.mean, b.mean, atol=1e-12)
    np.testing.assert_allclose(out.cov, b.cov, atol=1e-12)


def test_linear_time_update():
    rng = np.random.default_rng(2)
    A = rng.normal(size=(4, 4))
    Q = random_spd(4, 3)
    b = GaussianBelief(rng.normal(size=4), random_spd(4, 4))
    out = time_update(cubature_points(b), lambda s: s @ A.T, Q)
    np.testing.assert_allclose(out.mean, A @ b.mean, atol=1e-10)
    np.testing.assert_allclose(out.cov, A @ b.cov @ A.T + Q, atol=1e-10)


def test_constant_map():
    Q = random_spd(2, 5)
    out = time_update(cubature_points(GaussianBelief(np.zeros(2), np.eye(2))), lambda s: np.tile([3.0, 4.0], (4, 1)), Q)
    np.testing.assert_allclose(out.mean, [3, 4])
    np.testing.assert_allclose(out.cov, Q, atol=1e-14)


def test_nonfinite_point_index():
    def f(s):
        out = s.copy()
        out[2] = np.nan
        return out

    with pytest.raises(NumericalError) as err:
        propagate(cubature_points(GaussianBelief(np.zeros(2), np.eye(2))), f, np.eye(2))
    assert err.value.index == 2


def linear_model(H, R):
    return MeasurementModel(H.shape[0], lambda s: s @ H.T, R, (False,) * H.shape[0])


def test_linear_measurement_update_matches_kf():
    rng = np.random.default_rng(8)
    H = rng.normal(size=(2, 4))
    R = random_spd(2, 9)
    pred = GaussianBelief(rng.normal(size=4), random_spd(4, 10))
    y = rng.normal(size=2)
    out = measurement_update(pred, y, linear_model(H, R))
    S = H @ pred.cov @ H.T + R
    K = pred.cov @ H.T @ np.linalg.inv(S)
    np.testing.assert_allclose(out.mean, pred.mean + K @ (y - H @ pred.mean), atol=1e-10)
    np.testing.assert_allclose(out.cov, pred.cov - K @ S @ K.T, atol=1e-10)
    lin = linear_update(pred, y, H, R)
    np.testing.assert_allclose(lin.mean, out.mean, atol=1e-10)


def test_uninformative_measurement():
    pred = GaussianBelief(np.array([1.0, 2.0]), random_spd(2, 11))
    out = measurement_update(pred, [100.0], linear_model(np.array([[1.0, 0.0]]), 1e12 * np.eye(1)))
    assert np.max(np.abs(out.mean - pred.mean)) <= 1e-5 * np.abs(pred.mean).max()
    assert np.linalg.norm(out.cov - pred.cov) <= 1e-5 * np.linalg.norm(pred.cov)


def test_bearing_innovation_wraps():
    # state is the angle itself, predicted at pi - 0.005; observing -pi + 0.005 is an innovation of +0.01
    h = MeasurementModel(1, lambda s: s, np.eye(1) * 1e-4, (True,))
    pred = GaussianBelief(np.array([np.pi - 0.005]), np.eye(1) * 1e-6)
    y = np.array([-np.pi + 0.005])
    out = measurement_update(pred, y, h)
    naive = measurement_update(pred, y + 2 * np.pi, h)
    np.testing.assert_allclose(out.mean, naive.mean, atol=1e-12)
    assert out.mean[0] > pred.mean[0]


def test_bad_measurement_length():
    with pytest.raises(DimensionError):
        measurement_update(GaussianBelief(np.zeros(2), np.eye(2)), [1.0, 2.0],
                           linear_model(np.array([[1.0, 0.0]]), np.eye(1)))


def test_full_pass_matches_kalman_filter():
    m0, P0, A, Q, H, R, ys = linear_gaussian_problem()
    ref_m, ref_P = kalman_filter(m0, P0, A, Q, H, R, ys)
    b = GaussianBelief(m0, P0)
    model = linear_model(H, R)
    for k, y in enumerate(ys):
        b = measurement_update(time_update(cubature_points(b), lambda s: s @ A.T, Q), y, model)
        assert np.max(np.abs(b.mean - ref_m[k])) <= 1e-8
        assert np.max(np.abs(b.cov - ref_P[k])) <= 1e-8


def test_marginal_update_matches_joint_on_linear_model():
    rng = np.random.default_rng(12)
    P = random_spd(7, 13)
    pred = GaussianBelief(rng.normal(size=7), P)
    idx = np.array([3, 5])
    H = np.zeros((2, 7))
    H[0, 3], H[1, 5], H[1, 3] = 1.0, 2.0, 0.5
    R = np.diag([0.2, 0.1])
    y = rng.normal(size=2)
    a = marginal_measurement_update(pred, y, linear_model(H, R), idx)
    b = linear_update(pred, y, H, R)
    np.testing.assert_allclose(a.mean, b.mean, atol=1e-10)
    np.testing.assert_allclose(a.cov, b.cov, atol=1e-10)


def test_determinism():
    b = GaussianBelief(np.arange(3.0), random_spd(3, 0))
    a1 = time_update(cubature_points(b), np.sin, np.eye(3))
    a2 = time_update(cubature_points(b), np.sin, np.eye(3))
    np.testing.assert_array_equal(a1.mean, a2.mean)
    np.testing.assert_array_equal(a1.cov, a2.cov)
