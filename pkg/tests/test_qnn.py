import numpy as np
import pytest
from conftest import dataset
from sklearn.exceptions import NotFittedError

from sensorcast import qnn
from sensorcast.qnn import (GapError, LagMatrixSpec, MinMaxScaler, QuantileNet, QuantileNetRegressor,
                            count_parameters, hidden_dim, pinball_loss)


def test_hidden_dim_examples():
    assert hidden_dim(600, 30) == 330
    assert hidden_dim(10, 2) == 7
    assert hidden_dim(1, 1) == 1


def test_parameter_counts():
    assert count_parameters(600, 30) == 228_120 > 200_000
    assert count_parameters(240, 30) == 49_740
    assert count_parameters(1, 1) == 8


def test_parameter_count_matches_net(rng):
    for f, t in [(4, 2), (7, 1), (24, 3)]:
        net = QuantileNet.init(f, t, rng)
        assert net.n_parameters() == count_parameters(f, t) == net.flat().size


def test_pinball_examples():
    assert pinball_loss([2.0], [0.0], 0.5) == 1.0
    assert pinball_loss([3.0, -1.0], [3.0, -1.0], 0.9) == 0.0
    assert pinball_loss([0.0], [1.0], 0.1) == pytest.approx(0.9, rel=1e-15)
    assert pinball_loss([1.0], [0.0], 0.1) == pytest.approx(0.1, rel=1e-15)
    with pytest.raises(ValueError):
        pinball_loss([1.0, 2.0], [1.0], 0.5)


def test_pinball_median_is_half_mae(rng):
    y, p = rng.normal(size=20000) * 10, rng.normal(size=20000) * 10
    mae = np.mean(np.abs(y - p))
    assert abs(pinball_loss(y, p, 0.5) - 0.5 * mae) <= 1e-12 * 0.5 * mae


def test_pinball_non_negative(rng):
    for q in (0.1, 0.5, 0.9):
        y, p = rng.normal(size=50), rng.normal(size=50)
        assert pinball_loss(y, p, q) > 0


def test_scaler_examples(rng):
    s = MinMaxScaler().fit(np.array([[0.0], [10.0]]))
    assert s.transform([[5.0]])[0, 0] == 0.5
    assert s.transform([[20.0]])[0, 0] == 2.0  # not clipped
    c = MinMaxScaler().fit(np.array([[3.0, 1.0], [3.0, 2.0]]))
    np.testing.assert_array_equal(c.transform([[7.0, 1.5], [-1.0, 1.0]])[:, 0], 0.0)
    X = rng.normal(size=(100, 4)) * 1e3
    s = MinMaxScaler().fit(X)
    Z = s.transform(X)
    assert Z.min() == 0.0 and Z.max() == 1.0
    # values near zero come back through cancellation, so the floor is the column range
    span = X.max(axis=0) - X.min(axis=0)
    assert np.all(np.abs(s.inverse_transform(Z) - X) <= 1e-12 * np.maximum(np.abs(X), span))
    with pytest.raises(NotFittedError):
        MinMaxScaler().transform(X)


def test_forward_examples(rng):
    net = QuantileNet.init(4, 2, rng)
    net.W1[:] = 0
    net.W2[:] = 0
    net.b2[:] = [[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]
    out, _ = net.forward(rng.normal(size=(5, 4)))
    for k, c in enumerate([1.0, 2.0, 3.0]):
        np.testing.assert_array_equal(out[k], c)
    net = QuantileNet.init(4, 2, rng)
    net.W1[:] = np.abs(net.W1)
    net.b1[:] = -1.0
    out, H = net.forward(-np.abs(rng.normal(size=(6, 4))))
    assert not H.any()
    np.testing.assert_array_equal(out, np.broadcast_to(net.b2[:, None, :], out.shape))
    with pytest.raises(ValueError):
        net.forward(np.ones((1, 5)))


def _finite_difference_check(seed, n_features=4, n_targets=2, n=16, h=1e-5):
    rng = np.random.default_rng(seed)
    net = QuantileNet.init(n_features, n_targets, rng)
    X = rng.random((n, n_features))
    Y = rng.random((n, n_targets))
    _, grad = net.loss_and_grad(X, Y)
    theta = net.bind(np.empty(net.n_parameters()))
    num = np.empty_like(theta)
    for i in range(theta.size):
        keep = theta[i]
        theta[i] = keep + h
        up = net.loss(X, Y)
        theta[i] = keep - h
        down = net.loss(X, Y)
        theta[i] = keep
        num[i] = (up - down) / (2 * h)
    # relative to the gradient's overall size, so near-zero entries do not blow up
    return np.max(np.abs(grad - num)) / max(np.max(np.abs(num)), 1e-12)


def test_gradient_matches_finite_differences():
    errors = [_finite_difference_check(seed) for seed in range(20)]
    assert max(errors) <= 1e-4, errors


def test_gradient_on_wider_net():
    assert _finite_difference_check(123, n_features=9, n_targets=3, n=40) <= 1e-4


def test_training_reduces_loss_and_is_deterministic(rng):
    X = rng.random((300, 6))
    Y = np.c_[X[:, :2].sum(axis=1), X[:, 3]] + 0.05 * rng.normal(size=(300, 2))
    a = QuantileNetRegressor(epochs=40, random_state=3).fit(X, Y)
    b = QuantileNetRegressor(epochs=40, random_state=3).fit(X, Y)
    assert a.dumps() == b.dumps()
    np.testing.assert_array_equal(a.net_.flat(), b.net_.flat())
    assert len(a.loss_trace_) == 41 and np.isfinite(a.loss_trace_).all()
    assert a.loss_trace_[-1] < 0.8 * a.loss_trace_[0]
    Q = a.predict_quantiles(X)
    assert Q.shape == (300, 3, 2)
    np.testing.assert_array_equal(a.predict(X), Q[:, 1])


def test_constant_target_median_converges(rng):
    X = rng.random((200, 5))
    Y = np.full((200, 1), 4.0)
    est = QuantileNetRegressor(epochs=150, random_state=0).fit(X, Y)
    out, _ = est.net_.forward(est.x_scaler_.transform(X))
    assert np.max(np.abs(out[1])) < 0.05  # scaled units: the constant maps to 0
    np.testing.assert_allclose(est.predict(X)[:, 0], 4.0)


def test_round_trip_and_inverse_scaling(rng):
    X = rng.random((80, 4)) * 100
    Y = rng.random((80, 2)) * 50 + 10
    est = QuantileNetRegressor(epochs=3).fit(X, Y)
    back = QuantileNetRegressor.loads(est.dumps())
    np.testing.assert_array_equal(back.predict_quantiles(X), est.predict_quantiles(X))
    np.testing.assert_array_equal(back.loss_trace_, est.loss_trace_)
    # a net that outputs scaled truth must return the truth in original units
    ys = est.y_scaler_
    np.testing.assert_allclose(ys.inverse_transform(ys.transform(Y)), Y, rtol=1e-9)
    # zero weights: every quantile is the inverse-scaled bias
    est.net_.W2[:] = 0
    est.net_.b2[:] = 0.25
    np.testing.assert_allclose(est.predict_quantiles(X[:2]), np.broadcast_to(ys.inverse_transform([[0.25, 0.25]]),
                                                                              (2, 3, 2)), rtol=1e-12)


def test_training_inputs_scale_into_unit_interval(rng):
    X = rng.normal(size=(50, 3)) * 7
    est = QuantileNetRegressor(epochs=1).fit(X, X[:, :1])
    Z = est.x_scaler_.transform(X)
    assert Z.min() >= 0 and Z.max() <= 1


def test_empty_training_set():
    with pytest.raises(ValueError):
        qnn.train(QuantileNet.init(2, 1, np.random.default_rng(0)), np.empty((0, 2)), np.empty((0, 1)))


def test_lag_matrix_layout(rng):
    n = 40
    a, b = np.arange(n, dtype=float), 100 + np.arange(n, dtype=float)
    b[30] = np.nan
    ds = dataset({"A": a, "B": b}, {"A": "B200", "B": "B200"})
    spec = LagMatrixSpec(120, ("A", "B"))
    assert spec.lags == 8 and spec.n_features == 16
    anchors, X, Y = qnn.lag_matrix(ds, spec, 30)
    # anchor i needs cells i-7..i of both sensors and both targets at i+2
    keep = [i for i in range(7, n - 2) if not any(np.isnan(b[i - 7:i + 1])) and not np.isnan(b[i + 2])]
    assert len(X) == len(keep)
    i = keep[0]
    np.testing.assert_array_equal(X[0], np.r_[a[i - 7:i + 1], b[i - 7:i + 1]])
    np.testing.assert_array_equal(Y[0], [a[i + 2], b[i + 2]])
    assert anchors[0] == ds.grids["A"].timestamps[i]


def test_thirty_sensor_window_gives_thirty_triples(rng):
    sensors = tuple(f"S{i:02d}" for i in range(30))
    spec = LagMatrixSpec(120, sensors)
    X = rng.random((20, spec.n_features))
    Y = rng.random((20, 30))
    est = QuantileNetRegressor(epochs=1).fit(X, Y)
    assert est.net_.n_parameters() == count_parameters(240, 30)
    out = qnn.predict_window(est, rng.random((30, 8)))
    assert out.shape == (30, 3)
    window = rng.random((30, 8))
    window[4, 2] = np.nan
    with pytest.raises(GapError):
        qnn.predict_window(est, window)
