import numpy as np
import pytest
from sklearn.utils.estimator_checks import parametrize_with_checks

from bngd.estimator import BNGDRegressor, GDRegressor
from bngd.rng import substream


@parametrize_with_checks([BNGDRegressor(), GDRegressor()])
def test_sklearn_compatible(estimator, check):
    check(estimator)


def regression_data(seed, n=200, d=5, noise=0.0):
    rng = substream(seed)
    X = rng.standard_normal((n, d)) * np.linspace(0.5, 3.0, d)
    coef = rng.standard_normal(d)
    return X, X @ coef + noise * rng.standard_normal(n), coef


def test_bngd_recovers_exact_coefficients():
    X, y, coef = regression_data(1)
    est = BNGDRegressor(eps=1.0, max_iter=5000).fit(X, y)
    assert est.outcome_ == "converged_minimizer"
    np.testing.assert_allclose(est.coef_, coef, rtol=1e-6, atol=1e-8)
    assert est.score(X, y) > 1 - 1e-10
    assert est.eps_hat_ > 0


def test_bngd_matches_least_squares_with_noise():
    X, y, _ = regression_data(2, noise=0.3)
    ols = np.linalg.lstsq(X, y, rcond=None)[0]
    est = BNGDRegressor(eps=10.0, max_iter=20000).fit(X, y)
    np.testing.assert_allclose(est.coef_, ols, rtol=1e-5)


def test_bngd_large_eps_is_slow_but_stable():
    # the effective rate shrinks like 1/eps, so progress is steady but slow
    X, y, _ = regression_data(3)
    scores = [BNGDRegressor(eps=1e3, max_iter=k).fit(X, y).score(X, y) for k in (100, 2000, 20000)]
    assert scores[0] < scores[1] < scores[2]
    assert scores[2] > 0.99


def test_gd_matches_least_squares():
    X, y, coef = regression_data(4)
    lam_max = np.linalg.eigvalsh(X.T @ X / len(y))[-1]
    est = GDRegressor(eps=1.0 / lam_max, max_iter=20000).fit(X, y)
    np.testing.assert_allclose(est.coef_, coef, rtol=1e-6)


def test_gd_diverges_above_threshold():
    X, y, _ = regression_data(5)
    lam_max = np.linalg.eigvalsh(X.T @ X / len(y))[-1]
    est = GDRegressor(eps=2.5 / lam_max, max_iter=20000).fit(X, y)
    assert est.outcome_ == "diverged"


def test_rank_deficient_input_rejected():
    X = np.ones((10, 2))
    with pytest.raises(ValueError, match="positive definite"):
        BNGDRegressor().fit(X, np.arange(10.0))


def test_random_state_only_changes_path():
    X, y, _ = regression_data(6)
    a = BNGDRegressor(random_state=0, max_iter=5000).fit(X, y)
    b = BNGDRegressor(random_state=1, max_iter=5000).fit(X, y)
    np.testing.assert_allclose(a.coef_, b.coef_, rtol=1e-6)
    c = BNGDRegressor(random_state=0, max_iter=5000).fit(X, y)
    np.testing.assert_array_equal(a.coef_, c.coef_)
