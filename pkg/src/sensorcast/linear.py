"""Persistence baseline and standardized least-squares regression."""
from __future__ import annotations

import json

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .features import LAYOUT_VERSION, WindowSpec

FORMAT_TAG = "sensorcast-linear-v1"
LAST_VALUE_TAG = "sensorcast-last-value-v1"


def _check_features(est, X):
    X = check_array(X)
    if X.shape[1] != est.n_features_in_:
        raise ValueError(f"expected {est.n_features_in_} features, got {X.shape[1]}")
    return X


class LastValueRegressor(RegressorMixin, BaseEstimator):
    """Predicts that the sensor stays at its value at the anchor.

    Parameters
    ----------
    last_index : int
        Column holding the anchor value in the feature layout.
    """

    def __init__(self, last_index=WindowSpec().last_value_index):
        self.last_index = last_index

    def fit(self, X, y=None):
        X = check_array(X)
        if not 0 <= self.last_index < X.shape[1]:
            raise ValueError("last_index outside the feature layout")
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "n_features_in_")
        return _check_features(self, X)[:, self.last_index].copy()

    def dumps(self) -> str:
        check_is_fitted(self, "n_features_in_")
        return json.dumps({"format": LAST_VALUE_TAG, "last_index": self.last_index,
                           "n_features": self.n_features_in_}, indent=1)

    @classmethod
    def loads(cls, text: str) -> "LastValueRegressor":
        d = json.loads(text)
        if d.get("format") != LAST_VALUE_TAG:
            raise ValueError(f"not a last-value model document: {d.get('format')!r}")
        est = cls(int(d["last_index"]))
        est.n_features_in_ = int(d["n_features"])
        return est


class LinearRegressor(RegressorMixin, BaseEstimator):
    """Least squares on standardized features with a tiny ridge term.

    Features are centred and scaled to unit standard deviation (constant
    columns keep scale 1). The ridge-stabilized normal equations are solved by
    Cholesky factorization, so collinear columns do not break the fit.

    Parameters
    ----------
    ridge : float, default=1e-8
        Penalty added to the diagonal of the standardized Gram matrix.
    """

    def __init__(self, ridge=1e-8):
        self.ridge = ridge

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        if self.ridge < 0:
            raise ValueError("ridge must be non-negative")
        self.n_features_in_ = X.shape[1]
        self.feature_means_ = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0
        self.feature_scales_ = scale
        Z = (X - self.feature_means_) / scale
        self.bias_ = float(y.mean())
        gram = Z.T @ Z
        gram[np.diag_indices_from(gram)] += self.ridge
        self.coef_ = cho_solve(cho_factor(gram, lower=True), Z.T @ (y - self.bias_))
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = _check_features(self, X)
        return self.bias_ + ((X - self.feature_means_) / self.feature_scales_) @ self.coef_

    def to_dict(self) -> dict:
        check_is_fitted(self, "coef_")
        return {
            "format": FORMAT_TAG,
            "layout": LAYOUT_VERSION,
            "ridge": self.ridge,
            "bias": self.bias_,
            "weights": self.coef_.tolist(),
            "feature_means": self.feature_means_.tolist(),
            "feature_scales": self.feature_scales_.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LinearRegressor":
        if d.get("format") != FORMAT_TAG:
            raise ValueError(f"not a linear model document: {d.get('format')!r}")
        est = cls(ridge=d["ridge"])
        est.bias_ = float(d["bias"])
        est.coef_ = np.asarray(d["weights"], dtype=float)
        est.feature_means_ = np.asarray(d["feature_means"], dtype=float)
        est.feature_scales_ = np.asarray(d["feature_scales"], dtype=float)
        est.n_features_in_ = len(est.coef_)
        return est

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def loads(cls, text: str) -> "LinearRegressor":
        return cls.from_dict(json.loads(text))
