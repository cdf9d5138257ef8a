import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from apbmtrack.errors import DomainError, InvalidValueError
from apbmtrack.metrics import (POSITION, VELOCITY, McEnsemble, anees_k, boxplot_summary, chi2_band, error_cdf,
                               pooled_error_norms, rmse_k)

from oracles import chi2_simulation_band


def ensemble(errors, cov=None):
    errors = np.asarray(errors, dtype=float)
    truths = np.zeros_like(errors)
    covs = None if cov is None else np.broadcast_to(cov, errors.shape + (errors.shape[-1],)).copy()
    return McEnsemble(truths, -errors, covs)


def test_perfect_estimates():
    ens = ensemble(np.zeros((3, 5, 4)), np.eye(4))
    np.testing.assert_array_equal(rmse_k(ens, POSITION), np.zeros(5))
    np.testing.assert_array_equal(anees_k(ens), np.zeros(5))


def test_single_run_constant_error():
    err = np.full((1, 4, 4), -2.5)
    np.testing.assert_allclose(rmse_k(ensemble(err), VELOCITY), np.full(4, 2.5))


def test_two_run_micro_ensemble():
    # component 0 errs by 1 in run 1 and by 0 in run 2 (and vice versa for component 2)
    err = np.zeros((2, 3, 4))
    err[0, :, 0] = 1.0
    err[1, :, 2] = 1.0
    ens = ensemble(err, np.eye(4))
    assert rmse_k(ens, (0,)).tolist() == [np.sqrt(0.5)] * 3
    assert rmse_k(ens, POSITION).tolist() == [np.sqrt(0.5)] * 3
    assert anees_k(ens).tolist() == [1.0] * 3


def test_anees_identity_covariance():
    rng = np.random.default_rng(0)
    err = rng.normal(size=(6, 4, 4))
    np.testing.assert_allclose(anees_k(ensemble(err, np.eye(4))), np.mean(np.sum(err**2, axis=2), axis=0))


def test_anees_weighted_hand_value():
    err = np.zeros((2, 1, 4))
    err[0, 0] = [2, 0, 0, 0]
    err[1, 0] = [0, 3, 0, 0]
    ens = ensemble(err, np.diag([4.0, 9.0, 1.0, 1.0]))
    assert anees_k(ens).tolist() == [1.0]


def test_anees_calibrated_concentrates():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(4, 4))
    P = A @ A.T + np.eye(4)
    L = np.linalg.cholesky(P)
    err = rng.standard_normal((100, 200, 4)) @ L.T
    val = anees_k(ensemble(err, P)).mean()
    assert 3.5 <= val <= 4.5


def test_anees_needs_covariance():
    with pytest.raises(DomainError):
        anees_k(ensemble(np.zeros((1, 2, 4))))


@pytest.mark.parametrize("errs, grid, expected", [
    ([0.0, 0.0], [0.0, 1.0], [1.0, 1.0]),
    ([1.0, 3.0], [0.0, 2.0, 4.0], [0.0, 0.5, 1.0]),
])
def test_cdf_counting(errs, grid, expected):
    err = np.zeros((len(errs), 1, 4))
    err[:, 0, 0] = errs
    np.testing.assert_array_equal(error_cdf(ensemble(err), POSITION, grid), expected)


def test_cdf_right_continuous_and_pooled_size():
    rng = np.random.default_rng(2)
    ens = ensemble(rng.normal(size=(3, 7, 4)))
    norms = pooled_error_norms(ens, POSITION)
    assert norms.size == 21
    grid = np.sort(np.concatenate([norms, np.linspace(0, 5, 50)]))
    cdf = error_cdf(ens, POSITION, grid)
    assert np.all(np.diff(cdf) >= 0) and cdf[-1] <= 1
    # at a sample value the CDF already counts it
    assert error_cdf(ens, POSITION, [norms.min()])[0] == pytest.approx(1 / 21)
    with pytest.raises(InvalidValueError):
        error_cdf(ens, POSITION, [1.0, 0.0])


@pytest.mark.parametrize("series, q1, med, q3", [([1, 2, 3, 4, 5], 2, 3, 4), ([1, 2, 3, 4], 1.75, 2.5, 3.25),
                                                 ([7, 7, 7], 7, 7, 7)])
def test_boxplot(series, q1, med, q3):
    s = boxplot_summary(series)
    assert (s["q1"], s["median"], s["q3"]) == (q1, med, q3)
    assert s["min"] == min(series) and s["max"] == max(series)


def test_boxplot_empty():
    with pytest.raises(DomainError):
        boxplot_summary([])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 10))
def test_rmse_permutation_and_scaling(seed, c):
    rng = np.random.default_rng(seed)
    err = rng.normal(size=(5, 6, 4))
    base = rmse_k(ensemble(err), POSITION)
    np.testing.assert_allclose(rmse_k(ensemble(err[rng.permutation(5)]), POSITION), base, rtol=1e-12)
    np.testing.assert_allclose(rmse_k(ensemble(c * err), POSITION), c * base, rtol=1e-12)


def test_shape_and_finiteness_validation():
    with pytest.raises(InvalidValueError):
        McEnsemble(np.zeros((2, 3, 4)), np.zeros((2, 4, 4)))
    with pytest.raises(InvalidValueError):
        McEnsemble(np.full((1, 1, 4), np.nan), np.zeros((1, 1, 4)))
    with pytest.raises(DomainError):
        rmse_k(ensemble(np.zeros((1, 2, 4))), ())


@pytest.mark.parametrize("n_mc", [25, 100])
def test_chi2_band_against_simulation(n_mc):
    lo, hi = chi2_band(4, n_mc)
    sim_lo, sim_hi = chi2_simulation_band(4, n_mc)
    assert lo == pytest.approx(sim_lo, rel=0.02)
    assert hi == pytest.approx(sim_hi, rel=0.02)
    assert lo < 4 < hi
