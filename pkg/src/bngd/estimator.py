"""scikit-learn style regressors that fit a linear model by BNGD or GD.

The data enter only through their moments ``H = X^T X / n``,
``g = X^T y / n`` and ``c = y^T y / n``; the iterations then run on the
resulting OLS instance.  No intercept is fitted, and the batch-normalized
model has no shift parameter, so center the data beforehand if needed.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, validate_data

from .dynamics import RunConfig, run
from .model import ProblemInstance
from .rng import substream
from .spectral import SpectralError, SymMatrix


def _moments(X, y):
    n, d = X.shape
    h = X.T @ X / n
    g = X.T @ y / n
    c = float(y @ y) / n
    try:
        hm = SymMatrix(h, is_spd=True)
    except SpectralError as exc:
        raise ValueError(
            f"X^T X / n must be positive definite; got {n} sample(s) for {d} feature(s)"
        ) from exc
    u = np.linalg.solve(hm.entries, g)
    # c may sit a rounding error below u^T H u for an exact fit
    return ProblemInstance(hm, u, c=max(c, float(u @ hm.entries @ u)))


class _MomentRegressor(RegressorMixin, BaseEstimator):
    _mode = "bngd"

    def _config(self, d):
        raise NotImplementedError

    def fit(self, X, y):
        X, y = validate_data(self, X, y, y_numeric=True, dtype=np.float64)
        self.problem_ = _moments(X, y)
        self.trajectory_ = run(self.problem_, self._config(X.shape[1]), self._mode)
        self.outcome_ = self.trajectory_.outcome
        self.n_iter_ = self.trajectory_.n_iters
        self.coef_ = self._coef()
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = validate_data(self, X, reset=False, dtype=np.float64)
        return X @ self.coef_


class BNGDRegressor(_MomentRegressor):
    """Linear regression trained by batch-normalized gradient descent.

    The prediction is ``a * x^T w / sigma`` with ``sigma = ||w||_H``.

    Parameters
    ----------
    eps : float
        Learning rate for ``w``; any positive value is stable.
    eps_a : float
        Learning rate for the scale ``a``, in (0, 2).
    a0 : float
        Initial scale.
    max_iter : int
    random_state : int
        Seed for the random unit initial ``w``.

    Attributes
    ----------
    coef_ : ndarray of shape (n_features,)
        Effective weights ``a w / sigma``.
    eps_hat_ : float
        Effective learning rate at the last iterate.
    """

    def __init__(self, eps=1.0, eps_a=1.0, a0=0.0, max_iter=1000, random_state=0):
        self.eps = eps
        self.eps_a = eps_a
        self.a0 = a0
        self.max_iter = max_iter
        self.random_state = random_state

    def _config(self, d):
        w0 = substream(self.random_state).standard_normal(d)
        return RunConfig(eps=self.eps, w0=w0 / np.linalg.norm(w0), eps_a=self.eps_a,
                         a0=self.a0, max_iters=self.max_iter)

    def _coef(self):
        a, w = self.trajectory_.final_state
        sigma = np.sqrt(w @ self.problem_.matvec(w))
        self.eps_hat_ = self.trajectory_.eps_hat_limit
        return a * w / sigma


class GDRegressor(_MomentRegressor):
    """Linear regression trained by plain gradient descent from zero."""

    _mode = "gd"

    def __init__(self, eps=0.1, max_iter=1000):
        self.eps = eps
        self.max_iter = max_iter

    def _config(self, d):
        return RunConfig(eps=self.eps, w0=np.zeros(d), max_iters=self.max_iter)

    def _coef(self):
        return np.array(self.trajectory_.final_state[1])
