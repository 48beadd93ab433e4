"""Two-layer quantile network trained with pinball loss.

One shared ReLU hidden layer feeds a separate linear head per quantile. The
hidden width is ``n_features // 2 + n_targets``. Inputs and targets are
min-max scaled with training statistics; predictions are mapped back to
original units.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array, check_is_fitted

QUANTILES = (0.1, 0.5, 0.9)
FORMAT_TAG = "sensorcast-qnn-v1"


class MinMaxScaler(TransformerMixin, BaseEstimator):
    """Per-column affine map of the training range onto [0, 1].

    Unlike scikit-learn's scaler, a constant column maps to 0 for every input,
    and out-of-range values are never clipped.
    """

    def fit(self, X, y=None):
        X = check_array(X)
        self.data_min_ = X.min(axis=0)
        self.data_max_ = X.max(axis=0)
        self.n_features_in_ = X.shape[1]
        return self

    def _range(self):
        if not hasattr(self, "data_min_"):
            raise NotFittedError("MinMaxScaler used before fit")
        rng = self.data_max_ - self.data_min_
        const = rng == 0
        return np.where(const, 1.0, rng), const

    def transform(self, X):
        rng, const = self._range()
        X = check_array(X)
        return np.where(const, 0.0, (X - self.data_min_) / rng)

    def inverse_transform(self, X):
        rng, const = self._range()
        X = np.asarray(X, dtype=float)
        return np.where(const, self.data_min_, X * rng + self.data_min_)


def hidden_dim(n_features: int, n_targets: int) -> int:
    return n_features // 2 + n_targets


def count_parameters(n_features: int, n_targets: int, n_quantiles: int = len(QUANTILES)) -> int:
    h = hidden_dim(n_features, n_targets)
    return h * (n_features + 1) + n_quantiles * n_targets * (h + 1)


def pinball_loss(y_true, y_pred, q: float) -> float:
    """Mean of ``max(q * (y - p), (1 - q) * (p - y))``."""
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"shape mismatch: {y_true.shape} vs {y_pred.shape}")
    if not 0 < q < 1:
        raise ValueError("q must lie in (0, 1)")
    d = y_true - y_pred
    return float(np.mean(np.maximum(q * d, (q - 1) * d)))


@dataclass
class QuantileNet:
    """Raw parameters. ``W2``/``b2`` stack one head per quantile on axis 0."""

    W1: np.ndarray  # (hidden, n_features)
    b1: np.ndarray  # (hidden,)
    W2: np.ndarray  # (n_quantiles, n_targets, hidden)
    b2: np.ndarray  # (n_quantiles, n_targets)
    quantiles: tuple[float, ...] = QUANTILES

    @classmethod
    def init(cls, n_features, n_targets, rng: np.random.Generator, quantiles=QUANTILES):
        h = hidden_dim(n_features, n_targets)
        k = len(quantiles)
        # fan-in scaled uniform, as in torch.nn.Linear
        a1, a2 = 1 / np.sqrt(n_features), 1 / np.sqrt(h)
        return cls(rng.uniform(-a1, a1, (h, n_features)), rng.uniform(-a1, a1, h),
                   rng.uniform(-a2, a2, (k, n_targets, h)), rng.uniform(-a2, a2, (k, n_targets)),
                   tuple(quantiles))

    @property
    def n_features(self) -> int:
        return self.W1.shape[1]

    @property
    def n_targets(self) -> int:
        return self.W2.shape[1]

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    def params(self) -> list[np.ndarray]:
        return [self.W1, self.b1, self.W2, self.b2]

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params())

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    def bind(self, theta: np.ndarray) -> np.ndarray:
        """Copy the parameters into ``theta`` and make them views of it."""
        theta[:] = self.flat()
        at = 0
        for name in ("W1", "b1", "W2", "b2"):
            shape = getattr(self, name).shape
            size = int(np.prod(shape))
            setattr(self, name, theta[at:at + size].reshape(shape))
            at += size
        return theta

    def _out(self, H):
        k, t, h = self.W2.shape
        out = H @ self.W2.reshape(k * t, h).T + self.b2.ravel()
        return out.reshape(len(H), k, t).transpose(1, 0, 2)

    def forward(self, X):
        """Outputs of shape ``(n_quantiles, n, n_targets)`` and the hidden activations."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} inputs, got {X.shape[1]}")
        H = np.maximum(X @ self.W1.T + self.b1, 0.0)
        return self._out(H), H

    def loss(self, X, Y) -> float:
        """Sum over quantiles and targets of the batch-mean pinball loss."""
        out, _ = self.forward(X)
        q = np.asarray(self.quantiles)[:, None, None]
        d = Y[None] - out
        return float(np.maximum(q * d, (q - 1) * d).mean(axis=1).sum())

    def loss_and_grad(self, X, Y, out=None):
        """Loss and gradient; the gradient is flat, in ``flat()`` order.

        ``out`` is an optional preallocated gradient buffer.
        """
        k, t, h = self.W2.shape
        n, f = X.shape
        H = np.maximum(X @ self.W1.T + self.b1, 0.0)
        W2 = self.W2.reshape(k * t, h)
        P = H @ W2.T + self.b2.ravel()  # (n, k*t)
        q = np.repeat(np.asarray(self.quantiles), t)
        d = np.tile(Y, k) - P
        loss = float(np.maximum(q * d, (q - 1) * d).sum() / n)
        # d loss / d pred: -q where y > pred, (1 - q) where y < pred
        g = np.where(d > 0, -q, 1 - q) / n
        grad = np.empty(self.n_parameters()) if out is None else out
        a, b = h * f, h * f + h
        gZ = (g @ W2) * (H > 0)
        np.matmul(gZ.T, X, out=grad[:a].reshape(h, f))
        gZ.sum(axis=0, out=grad[a:b])
        np.matmul(g.T, H, out=grad[b:b + k * t * h].reshape(k * t, h))
        g.sum(axis=0, out=grad[b + k * t * h:])
        return loss, grad


def train(net: QuantileNet, X, Y, epochs=200, batch_size=64, step_size=1e-3, seed=0,
          betas=(0.9, 0.999), eps=1e-8) -> np.ndarray:
    """Mini-batch Adam on the summed pinball loss; updates ``net`` in place.

    Returns the full-data training loss before the first epoch and after
    each epoch.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if len(X) == 0:
        raise ValueError("cannot train on an empty set")
    rng = np.random.default_rng(seed)
    theta = net.bind(np.empty(net.n_parameters()))
    grad = np.empty_like(theta)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    b1, b2 = betas
    t = 0
    trace = [net.loss(X, Y)]
    for _ in range(epochs):
        perm = rng.permutation(len(X))
        for start in range(0, len(X), batch_size):
            idx = perm[start:start + batch_size]
            net.loss_and_grad(X[idx], Y[idx], out=grad)
            t += 1
            m *= b1
            m += (1 - b1) * grad
            v *= b2
            v += (1 - b2) * grad * grad
            theta -= (step_size / (1 - b1 ** t)) * m / (np.sqrt(v / (1 - b2 ** t)) + eps)
        trace.append(net.loss(X, Y))
    return np.array(trace)


class QuantileNetRegressor(RegressorMixin, BaseEstimator):
    """Joint multi-target quantile regressor.

    ``predict`` returns the median head; ``predict_quantiles`` returns every
    head with shape ``(n_samples, n_quantiles, n_targets)`` in original units.

    Parameters
    ----------
    epochs : int, default=200
    batch_size : int, default=64
    step_size : float, default=1e-3
        Adam step size.
    random_state : int, default=0
        Seeds initialization and batch shuffling.
    quantiles : tuple of float, default=(0.1, 0.5, 0.9)
    """

    def __init__(self, epochs=200, batch_size=64, step_size=1e-3, random_state=0, quantiles=QUANTILES):
        self.epochs = epochs
        self.batch_size = batch_size
        self.step_size = step_size
        self.random_state = random_state
        self.quantiles = quantiles

    def fit(self, X, Y):
        X = check_array(X)
        Y = check_array(Y, ensure_2d=False)
        if Y.ndim == 1:
            Y = Y[:, None]
        if len(X) != len(Y):
            raise ValueError("X and Y have different numbers of rows")
        if min(self.epochs, self.batch_size) < 1 or self.step_size <= 0:
            raise ValueError("epochs, batch_size and step_size must be positive")
        self.x_scaler_ = MinMaxScaler().fit(X)
        self.y_scaler_ = MinMaxScaler().fit(Y)
        rng = np.random.default_rng(self.random_state)
        self.net_ = QuantileNet.init(X.shape[1], Y.shape[1], rng, tuple(self.quantiles))
        self.loss_trace_ = train(self.net_, self.x_scaler_.transform(X), self.y_scaler_.transform(Y),
                                 self.epochs, self.batch_size, self.step_size,
                                 seed=int(rng.integers(2 ** 32)))
        self.n_features_in_ = X.shape[1]
        self.n_targets_ = Y.shape[1]
        return self

    def predict_quantiles(self, X) -> np.ndarray:
        check_is_fitted(self, "net_")
        X = check_array(X)
        out, _ = self.net_.forward(self.x_scaler_.transform(X))
        return np.stack([self.y_scaler_.inverse_transform(o) for o in out], axis=1)

    def predict(self, X):
        qs = list(self.net_.quantiles)
        return self.predict_quantiles(X)[:, qs.index(0.5) if 0.5 in qs else len(qs) // 2]

    def dumps(self) -> str:
        """Versioned text: dimensions, scaler statistics, flattened weights."""
        check_is_fitted(self, "net_")
        net = self.net_

        def row(name, a):
            return f"{name} " + " ".join(repr(float(x)) for x in np.ravel(a))

        lines = [
            FORMAT_TAG,
            f"dims n_features={net.n_features} n_targets={net.n_targets} hidden={net.hidden}",
            row("quantiles", net.quantiles),
            f"train epochs={self.epochs} batch_size={self.batch_size} "
            f"step_size={self.step_size!r} random_state={self.random_state}",
            row("x_min", self.x_scaler_.data_min_), row("x_max", self.x_scaler_.data_max_),
            row("y_min", self.y_scaler_.data_min_), row("y_max", self.y_scaler_.data_max_),
            row("W1", net.W1), row("b1", net.b1), row("W2", net.W2), row("b2", net.b2),
        ]
        if hasattr(self, "loss_trace_"):
            lines.append(row("loss_trace", self.loss_trace_))
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "QuantileNetRegressor":
        lines = text.splitlines()
        if not lines or lines[0] != FORMAT_TAG:
            raise ValueError("not a quantile network document")
        dims = dict(kv.split("=") for kv in lines[1].split()[1:])
        nf, nt, h = int(dims["n_features"]), int(dims["n_targets"]), int(dims["hidden"])
        rows = {ln.split(" ", 1)[0]: ln.split(" ", 1)[1] if " " in ln else "" for ln in lines[2:]}

        def arr(name, shape=None):
            a = np.array(rows[name].split(), dtype=float)
            return a.reshape(shape) if shape else a

        train_kw = dict(kv.split("=") for kv in rows["train"].split())
        quantiles = tuple(arr("quantiles"))
        est = cls(epochs=int(train_kw["epochs"]), batch_size=int(train_kw["batch_size"]),
                  step_size=float(train_kw["step_size"]), random_state=int(train_kw["random_state"]),
                  quantiles=quantiles)
        k = len(quantiles)
        est.net_ = QuantileNet(arr("W1", (h, nf)), arr("b1"), arr("W2", (k, nt, h)), arr("b2", (k, nt)),
                               quantiles)
        est.x_scaler_ = MinMaxScaler()
        est.x_scaler_.data_min_, est.x_scaler_.data_max_ = arr("x_min"), arr("x_max")
        est.x_scaler_.n_features_in_ = nf
        est.y_scaler_ = MinMaxScaler()
        est.y_scaler_.data_min_, est.y_scaler_.data_max_ = arr("y_min"), arr("y_max")
        est.y_scaler_.n_features_in_ = nt
        est.n_features_in_, est.n_targets_ = nf, nt
        if "loss_trace" in rows:
            est.loss_trace_ = arr("loss_trace")
        return est


class GapError(ValueError):
    pass


@dataclass(frozen=True)
class LagMatrixSpec:
    """Joint input layout: the last ``window/step`` cells of every sensor, sensor-major."""

    window_minutes: int
    sensors: tuple[str, ...]
    step_minutes: int = 15

    def __post_init__(self):
        if self.window_minutes <= 0 or self.window_minutes % self.step_minutes:
            raise ValueError("window must be a positive multiple of the step")
        object.__setattr__(self, "sensors", tuple(self.sensors))

    @property
    def lags(self) -> int:
        return self.window_minutes // self.step_minutes

    @property
    def n_features(self) -> int:
        return len(self.sensors) * self.lags

    @property
    def n_targets(self) -> int:
        return len(self.sensors)


def lag_matrix(ds, spec: LagMatrixSpec, horizon: int):
    """Rows ``(anchors, X, Y)`` with complete lag windows and present targets."""
    from numpy.lib.stride_tricks import sliding_window_view

    L = spec.lags
    h = horizon // spec.step_minutes
    if horizon <= 0 or horizon % spec.step_minutes:
        raise ValueError("horizon must be a positive multiple of the step")
    grids = [ds.grids[s] for s in spec.sensors]
    n_anchor = len(grids[0]) - (L - 1) - h
    if n_anchor <= 0:
        return (np.array([], dtype="datetime64[m]"), np.empty((0, spec.n_features)),
                np.empty((0, spec.n_targets)))
    X = np.concatenate([sliding_window_view(g.values, L)[:n_anchor] for g in grids], axis=1)
    Y = np.column_stack([g.values[L - 1 + h:L - 1 + h + n_anchor] for g in grids])
    ok = ~np.isnan(X).any(axis=1) & ~np.isnan(Y).any(axis=1)
    anchors = grids[0].timestamps[L - 1:L - 1 + n_anchor]
    return anchors[ok], X[ok], Y[ok]


def predict_window(est: QuantileNetRegressor, window: np.ndarray) -> np.ndarray:
    """Quantiles per sensor, shape ``(n_targets, n_quantiles)``, for one raw lag window.

    ``window`` has shape ``(n_sensors, lags)`` or is already flattened sensor-major.
    """
    x = np.asarray(window, dtype=float).reshape(1, -1)
    if np.isnan(x).any():
        raise GapError("lag window has missing cells")
    return est.predict_quantiles(x)[0].T
