"""scikit-learn style wrappers around the filter and the HJB solver."""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .filtering import EPS_FLOOR, filter_update
from .hjb import pre_policy, solve_both
from .model import MarketModel, validate_model
from .pde import Grid1D, Scheme, interpolate


class RegimeFilter(BaseEstimator, TransformerMixin):
    """Filter observed log-price increments into regime probabilities.

    ``transform`` takes one observation path ``X`` of shape ``(n_steps, 3)``
    with columns ``(dlogS, dlogP, dH)``; after default the ``dlogP`` column
    is ignored. It returns the filter on the grid, shape ``(n_steps + 1, N)``.

    Parameters
    ----------
    model : MarketModel
    dt : float
        Observation spacing.
    floor : float
        Clamp floor of the filter coordinates.
    """

    def __init__(self, model: Optional[MarketModel] = None, dt: float = 1e-3,
                 floor: float = EPS_FLOOR):
        self.model = model
        self.dt = dt
        self.floor = floor

    def fit(self, X=None, y=None):
        if self.model is None:
            raise ValueError("RegimeFilter needs a model")
        self.model_ = validate_model(self.model)
        self.n_regimes_ = self.model_.n_regimes
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != 3:
            raise ValueError("X must have shape (n_steps, 3): dlogS, dlogP, dH")
        p = self.model_.p0[None, :].copy()
        z = np.zeros(1)
        out = np.empty((X.shape[0] + 1, self.n_regimes_))
        out[0] = p[0]
        for k, row in enumerate(X):
            dH = np.array([row[2] if z[0] < 0.5 else 0.0])
            dY = np.array([[row[0], row[1] * (1.0 - z[0])]])
            upd = filter_update(self.model_, k * self.dt, p, z, dY, dH, self.dt, self.floor)
            p, z = upd.p, upd.z
            out[k + 1] = p[0]
        return out


class HJBPolicySolver(BaseEstimator):
    """Solve the two-regime problem on a grid and serve the optimal feedback.

    ``fit`` takes no data; ``predict`` maps rows ``(t, p, z)`` to
    ``(pi_S, pi_P)`` and ``value`` to ``w``.
    """

    def __init__(self, model: Optional[MarketModel] = None, n_space: int = 201,
                 n_time: int = 1000, theta: float = 1.0):
        self.model = model
        self.n_space = n_space
        self.n_time = n_time
        self.theta = theta

    def fit(self, X=None, y=None):
        if self.model is None:
            raise ValueError("HJBPolicySolver needs a model")
        model = validate_model(self.model)
        grid = Grid1D(self.n_space, self.n_time, model.horizon)
        self.problem_ = solve_both(model, grid, Scheme(theta=self.theta))
        self.policy_ = self.problem_.policy_field()
        return self

    def predict(self, X):
        check_is_fitted(self, "problem_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.array([pre_policy(self.problem_, t, p, int(z > 0.5)) for t, p, z in X])

    def value(self, X):
        check_is_fitted(self, "problem_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.empty(X.shape[0])
        for i, (t, p, z) in enumerate(X):
            surf = self.problem_.post.w if z > 0.5 else self.problem_.w
            out[i] = float(interpolate(surf, t, p))
        return out
