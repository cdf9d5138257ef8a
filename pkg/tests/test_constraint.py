import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from apbmtrack.apbm import THETA_BAR, apbm_transition, pbm_transition, theta_bar
from apbmtrack.ckf import CubatureSet
from apbmtrack.constraint import (FULL_SELECTION, VELOCITY_SELECTION, ConstraintSpec, build_sigma,
                                  constrain_cubature_set, default_reg_lambda, feasibility_slack, gate_on_mean,
                                  project_cubature_set, rho_at, rho_ss, solve_kappa, solve_kappa_batch, theta_kappa)
from apbmtrack.errors import DomainError, InvalidValueError, NumericalError
from apbmtrack.truth import noise_gain

M = noise_gain(1.0)
Q_DISCRETE = 0.01 * M @ M.T


def quadratic_case(a, x, eps):
    """Zero network with phi0 = 1 + a: rho(kappa) = kappa^2 a^2 |F x|^2 under Sigma = I."""
    theta = THETA_BAR.copy()
    theta[0] = 1.0 + a
    spec = ConstraintSpec("SSA", eps, FULL_SELECTION, np.eye(4))
    return theta, spec, np.sqrt(eps) / (abs(a) * np.linalg.norm(pbm_transition(x)))


def test_sigma_velocity_block():
    np.testing.assert_allclose(build_sigma(Q_DISCRETE, VELOCITY_SELECTION), 100 * np.eye(2), rtol=1e-12)


def test_sigma_identity():
    np.testing.assert_array_equal(build_sigma(np.eye(4), FULL_SELECTION), np.eye(4))


def test_sigma_singular_full_block():
    assert np.linalg.matrix_rank(M @ M.T) == 2
    with pytest.raises(NumericalError, match="reg_lambda"):
        build_sigma(Q_DISCRETE, FULL_SELECTION, 0.0)


def test_default_regularization():
    assert default_reg_lambda(Q_DISCRETE, VELOCITY_SELECTION) == 0.0
    lam = default_reg_lambda(Q_DISCRETE, FULL_SELECTION)
    assert lam == pytest.approx(1e-8 * np.trace(Q_DISCRETE) / 4)
    sigma = build_sigma(Q_DISCRETE, FULL_SELECTION, lam)
    np.testing.assert_allclose(sigma @ (Q_DISCRETE + lam * np.eye(4)), np.eye(4), atol=1e-6)


def test_rho_examples():
    spec = ConstraintSpec("SSA", 1.0, FULL_SELECTION, np.eye(4))
    v = np.array([1.0, 2.0, 3.0, 4.0])
    assert rho_ss(v, v, spec) == 0.0
    assert rho_ss(v, v, ConstraintSpec("SSR", 1.0)) == 0.0
    assert rho_ss(v + [1, 0, 0, 0], v, spec) == 1.0
    vel = ConstraintSpec("SSA", 1.0, VELOCITY_SELECTION, 100 * np.eye(2))
    assert rho_ss([0, 0.1, 0, 0.2], np.zeros(4), vel) == pytest.approx(5.0)


def test_ssr_and_root():
    ssr = ConstraintSpec("SSR", 1.0, FULL_SELECTION, np.eye(4))
    assert rho_ss([2.0, 0, 0, 0], [1.0, 0, 0, 0], ssr) == pytest.approx(1.0)
    assert rho_ss([4.0, 0, 0, 0], [2.0, 0, 0, 0], ssr) == pytest.approx(1.0)
    with pytest.raises(DomainError):
        rho_ss([1.0, 0, 0, 0], np.zeros(4), ssr)
    root = ConstraintSpec("SSA", 1.0, FULL_SELECTION, np.eye(4), metric_root=True)
    assert rho_ss([3.0, 4.0, 0, 0], np.zeros(4), root) == pytest.approx(5.0)


@given(st.lists(st.floats(-100, 100), min_size=4, max_size=4), st.lists(st.floats(-100, 100), min_size=4, max_size=4),
       st.lists(st.floats(-100, 100), min_size=4, max_size=4))
def test_ssa_translation_invariant(a, b, shift):
    spec = ConstraintSpec("SSA", 1.0, FULL_SELECTION, np.diag([1.0, 2.0, 3.0, 4.0]))
    a, b, s = map(np.array, (a, b, shift))
    assert rho_ss(a + s, b + s, spec) == pytest.approx(rho_ss(a, b, spec), rel=1e-9, abs=1e-6)


def test_spec_validation():
    with pytest.raises(InvalidValueError):
        ConstraintSpec("SSA", 0.0)
    with pytest.raises(InvalidValueError):
        ConstraintSpec("SSA", 1.0, (1, 1), np.eye(2))
    with pytest.raises(InvalidValueError):
        ConstraintSpec("XYZ", 1.0)
    ConstraintSpec("SSA", 1e-12)


def test_theta_kappa_examples():
    rng = np.random.default_rng(0)
    theta = rng.normal(size=51)
    np.testing.assert_array_equal(theta_kappa(theta, 1.0), theta)
    np.testing.assert_array_equal(theta_kappa(theta, 0.0), THETA_BAR)
    t = THETA_BAR.copy()
    t[0] = 3.0
    assert theta_kappa(t, 0.5)[0] == 2.0
    assert theta_kappa(theta_bar(), 0.3).phi0 == 1.0
    with pytest.raises(DomainError):
        theta_kappa(theta, 1.5)


@given(st.floats(0, 1), st.floats(0, 1))
def test_theta_kappa_lipschitz(k1, k2):
    theta = np.random.default_rng(1).normal(size=51)
    lhs = np.linalg.norm(theta_kappa(theta, k1) - theta_kappa(theta, k2))
    assert lhs == pytest.approx(abs(k1 - k2) * np.linalg.norm(theta - THETA_BAR), rel=1e-9, abs=1e-12)


def test_feasible_theta_returns_one():
    spec = ConstraintSpec("SSA", 1e-3, FULL_SELECTION, np.eye(4))
    assert solve_kappa(np.array([1.0, 2, 3, 4]), THETA_BAR, spec) == 1.0


@pytest.mark.parametrize("seed", range(5))
def test_quadratic_root(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=4) * 10
    theta, spec, expected = quadratic_case(rng.uniform(0.5, 2.0), x, rng.uniform(1e-3, 1.0))
    assert expected < 1
    assert solve_kappa(x, theta, spec) == pytest.approx(expected, abs=1e-8)


def test_rightmost_root_of_nonmonotone_g():
    # phi1 * nn(x) with phi0 pulled below 1 gives g a second root; the largest must win
    rng = np.random.default_rng(4)
    for _ in range(20):
        theta = rng.normal(size=51)
        x = rng.normal(size=4) * 5
        spec = ConstraintSpec("SSA", 0.5, FULL_SELECTION, np.eye(4))
        k = solve_kappa(x, theta, spec)
        assert 0 < k <= 1
        fine = np.linspace(k, 1, 2001)[1:]
        th = fine[:, None] * theta + (1 - fine[:, None]) * THETA_BAR
        rho = rho_ss(apbm_transition(x, None, th), pbm_transition(x), spec)
        if k < 1:
            assert rho_at(x, theta_kappa(theta, k), spec) <= spec.epsilon
            # nothing to the right of kappa* is feasible beyond the bisection width
            assert np.all(rho[fine > k + 1e-6] > spec.epsilon - 1e-6)


def test_batch_matches_scalar():
    rng = np.random.default_rng(9)
    xs, thetas = rng.normal(size=(6, 4)) * 3, rng.normal(size=(6, 51))
    spec = ConstraintSpec("SSA", 0.2, VELOCITY_SELECTION, np.eye(2))
    batch = solve_kappa_batch(xs, thetas, spec)
    for i in range(6):
        assert batch[i] == solve_kappa(xs[i], thetas[i], spec)


def make_joint(thetas, xs):
    return CubatureSet(np.hstack([thetas, xs]))


def test_constrain_feasible_set_unchanged():
    rng = np.random.default_rng(2)
    joint = make_joint(np.tile(THETA_BAR, (6, 1)), rng.normal(size=(6, 4)))
    spec = ConstraintSpec("SSA", 0.1, FULL_SELECTION, np.eye(4))
    proj = project_cubature_set(joint, None, spec)
    assert proj.kappa_min == 1.0
    np.testing.assert_array_equal(proj.points.points, joint.points)


def test_constrain_one_violator():
    x = np.array([1.0, 0.0, 0.0, 0.0])
    theta_v = THETA_BAR.copy()
    theta_v[0] = 3.0  # rho = kappa^2 * 4, eps = 1 -> kappa* = 0.5
    thetas = np.tile(THETA_BAR, (4, 1))
    thetas[1] = theta_v
    thetas[2, 0] = 1.1  # feasible: rho = 0.01
    joint = make_joint(thetas, np.tile(x, (4, 1)))
    spec = ConstraintSpec("SSA", 1.0, FULL_SELECTION, np.eye(4))
    proj = project_cubature_set(joint, None, spec)
    assert proj.kappa_min == pytest.approx(0.5, abs=1e-9)
    expected = 0.5 * thetas + 0.5 * THETA_BAR
    np.testing.assert_allclose(proj.points.points[:, :51], expected, atol=1e-9)
    np.testing.assert_array_equal(proj.points.points[:, 51:], joint.points[:, 51:])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000), st.sampled_from([1e-3, 0.03, 1.0]), st.sampled_from([FULL_SELECTION,
                                                                                      VELOCITY_SELECTION]))
def test_constrained_points_feasible_and_idempotent(seed, eps, sel):
    rng = np.random.default_rng(seed)
    n = 10
    thetas = THETA_BAR + rng.normal(size=(n, 51)) * rng.uniform(0.01, 1.0)
    xs = rng.normal(size=(n, 4)) * 20
    spec = ConstraintSpec("SSA", eps, sel, np.eye(len(sel)))
    proj = project_cubature_set(make_joint(thetas, xs), None, spec)
    assert np.all(proj.kappa_min <= proj.kappas + 1e-15)
    rho = rho_at(xs, proj.points.points[:, :51], spec)
    assert np.all(rho <= feasibility_slack(spec))
    again = constrain_cubature_set(proj.points, None, spec)
    np.testing.assert_allclose(again.points, proj.points.points, atol=1e-12)


def test_gate_on_mean():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    theta, spec, _ = quadratic_case(1.0, x, 0.01)
    assert not gate_on_mean(x, THETA_BAR, None, spec)
    assert gate_on_mean(x, theta, None, spec)
    big = ConstraintSpec("SSA", 1e12, FULL_SELECTION, np.eye(4))
    assert not gate_on_mean(x, theta, None, big)
