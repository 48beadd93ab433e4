import numpy as np
import pytest
from oracles import best_split

from sensorcast.gbt import GBTRegressor, fit_tree


def _random_instance(rng):
    n = int(rng.integers(2, 51))
    d = int(rng.integers(1, 6))
    if rng.random() < 0.5:
        X = rng.integers(0, 6, (n, d)).astype(float)  # many repeated values
    else:
        X = np.round(rng.normal(size=(n, d)), 2)
    r = rng.normal(size=n)
    return X, r, int(rng.integers(1, 6))


def test_root_split_matches_exhaustive_oracle(rng):
    checked = splits = 0
    for _ in range(200):
        X, r, min_leaf = _random_instance(rng)
        tree, _ = fit_tree(X, r, max_depth=1, min_samples_leaf=min_leaf)
        want = best_split(X.tolist(), r.tolist(), min_leaf)
        if want is None or want[2] <= 1e-12 * float(r @ r):
            assert tree.n_nodes == 1
        else:
            assert (tree.feature[0], tree.threshold[0]) == (want[0], want[1])
            splits += 1
        checked += 1
    assert checked == 200 and splits > 150


def test_every_node_split_is_optimal(rng):
    # each internal node must carry the oracle's best split over its own rows
    for _ in range(30):
        X, r, min_leaf = _random_instance(rng)
        tree, _ = fit_tree(X, r, max_depth=3, min_samples_leaf=min_leaf)
        stack = [(0, np.arange(len(r)))]
        while stack:
            node, rows = stack.pop()
            assert tree.n_samples[node] == len(rows)
            if tree.feature[node] < 0:
                assert node == 0 or len(rows) >= min_leaf
                assert tree.value[node] == pytest.approx(r[rows].mean(), rel=1e-12, abs=1e-15)
                continue
            want = best_split(X[rows].tolist(), r[rows].tolist(), min_leaf)
            assert (tree.feature[node], tree.threshold[node]) == (want[0], want[1])
            go = X[rows, tree.feature[node]] <= tree.threshold[node]
            stack += [(tree.left[node], rows[go]), (tree.right[node], rows[~go])]


def test_hand_example_split():
    X = np.array([[-1.0], [1.0]])
    tree, fitted = fit_tree(X, np.array([-0.5, 0.5]), max_depth=1, min_samples_leaf=1)
    assert (tree.feature[0], tree.threshold[0]) == (0, 0.0)
    assert list(tree.value[[tree.left[0], tree.right[0]]]) == [-0.5, 0.5]
    np.testing.assert_array_equal(fitted, [-0.5, 0.5])


def test_equal_residuals_make_a_single_leaf(rng):
    X = rng.normal(size=(40, 3))
    tree, fitted = fit_tree(X, np.full(40, 0.1), max_depth=6, min_samples_leaf=1)
    assert tree.n_nodes == 1 and tree.value[0] == 0.1
    np.testing.assert_array_equal(fitted, 0.1)


def test_identical_rows_cannot_split():
    X = np.ones((2, 3))
    tree, _ = fit_tree(X, np.array([1.0, 3.0]), max_depth=4, min_samples_leaf=1)
    assert tree.n_nodes == 1 and tree.value[0] == 2.0


def test_tie_goes_to_lowest_feature():
    X = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    tree, _ = fit_tree(X, np.array([0.0, 0.0, 1.0, 1.0]), max_depth=1, min_samples_leaf=1)
    assert tree.feature[0] == 0 and tree.threshold[0] == 1.5
    # two equally good thresholds on one feature: the lower one wins
    tree, _ = fit_tree(np.arange(4.0)[:, None], np.array([0.0, 1.0, 1.0, 0.0]), 1, 1)
    assert tree.threshold[0] == 0.5


def test_indicator_target_with_one_stump():
    X = np.array([[-1.0], [1.0]])
    m = GBTRegressor(n_estimators=1, max_depth=1, learning_rate=1.0, min_samples_leaf=1).fit(X, [0.0, 1.0])
    assert m.base_prediction_ == 0.5
    np.testing.assert_array_equal(m.predict(X), [0.0, 1.0])


def test_training_mse_is_non_increasing(rng):
    for _ in range(20):
        n, d = int(rng.integers(30, 200)), int(rng.integers(1, 8))
        X = rng.normal(size=(n, d))
        y = np.sin(2 * X[:, 0]) + X[:, -1] ** 2 + rng.normal(0, 0.3, n)
        m = GBTRegressor(n_estimators=40, max_depth=int(rng.integers(1, 5)),
                         learning_rate=float(rng.uniform(0.05, 1.0)), min_samples_leaf=int(rng.integers(1, 6)))
        loss = m.fit(X, y).train_loss_
        assert len(loss) == 41
        assert np.all(np.diff(loss) <= 0), np.diff(loss).max()
        staged = [np.mean((y - p) ** 2) for p in m.staged_predict(X)]
        np.testing.assert_allclose(staged, loss, rtol=1e-12)


def test_constant_targets(rng):
    X = rng.normal(size=(30, 4))
    m = GBTRegressor(n_estimators=5).fit(X, np.full(30, 2.5))
    np.testing.assert_array_equal(m.predict(X), 2.5)
    assert all(t.n_nodes == 1 and t.value[0] == 0.0 for t in m.trees_)


def test_zero_trees_predict_base(rng):
    X = rng.normal(size=(10, 2))
    m = GBTRegressor(n_estimators=0).fit(X, np.arange(10.0))
    np.testing.assert_array_equal(m.predict(X), 4.5)


def test_leaves_respect_min_samples_and_depth(rng):
    X = rng.normal(size=(300, 6))
    y = X[:, 0] * 3 + rng.normal(size=300)
    m = GBTRegressor(n_estimators=10, max_depth=4, min_samples_leaf=7).fit(X, y)
    for t in m.trees_:
        assert t.depth <= 4
        assert t.n_samples[t.leaves()].min() >= 7


def test_monotone_transform_keeps_split_choice(rng):
    for _ in range(50):
        X, r, min_leaf = _random_instance(rng)
        a, _ = fit_tree(X, r, 1, min_leaf)
        b, _ = fit_tree(np.exp(X), r, 1, min_leaf)
        assert a.feature[0] == b.feature[0]
        if a.feature[0] >= 0:
            go_a = X[:, a.feature[0]] <= a.threshold[0]
            go_b = np.exp(X)[:, b.feature[0]] <= b.threshold[0]
            np.testing.assert_array_equal(go_a, go_b)


def test_midpoint_rounding_keeps_partition():
    a = 1.0
    b = np.nextafter(a, 2.0)
    X = np.array([[a], [b]])
    tree, _ = fit_tree(X, np.array([0.0, 1.0]), 1, 1)
    assert tree.threshold[0] == a
    np.testing.assert_array_equal(tree.predict(X), [0.0, 1.0])


def test_deterministic_and_round_trip(rng):
    X = rng.normal(size=(150, 5))
    y = X[:, 1] - X[:, 2] ** 2 + rng.normal(size=150)
    a = GBTRegressor(n_estimators=25, max_depth=3).fit(X, y)
    b = GBTRegressor(n_estimators=25, max_depth=3).fit(X, y)
    assert a.dumps() == b.dumps()
    c = GBTRegressor.loads(a.dumps())
    np.testing.assert_array_equal(c.predict(X), a.predict(X))
    assert c.get_params() == a.get_params()


def test_input_validation(rng):
    with pytest.raises(ValueError):
        fit_tree(np.empty((0, 2)), np.empty(0))
    with pytest.raises(ValueError):
        GBTRegressor(learning_rate=0).fit(np.ones((3, 1)), np.ones(3))
    m = GBTRegressor(n_estimators=2).fit(rng.normal(size=(20, 3)), rng.normal(size=20))
    with pytest.raises(ValueError):
        m.predict(np.ones((1, 4)))
