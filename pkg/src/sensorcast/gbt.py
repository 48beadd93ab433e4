"""Gradient-boosted regression trees with squared-error loss.

Splits are exact and greedy: every midpoint between consecutive distinct
values of every feature is a candidate, and the one with the largest
reduction in squared error wins. Ties go to the lowest feature index and
then to the lowest threshold, so fits are fully deterministic; gains that
differ by no more than ``1e-12`` times the node's sum of squared residuals
count as tied.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

FORMAT_TAG = "sensorcast-gbt-v1"


@njit(cache=True)
def _best_split(vals, res, s0, s1, min_leaf, total, inv, tol):
    """Best ``(feature, position, gain)`` over the segment ``[s0, s1)`` of every feature row.

    ``vals[f]`` and ``res[f]`` hold feature values and residuals in the
    order sorted by feature ``f``; ``inv[k]`` is ``1 / k``. A candidate must
    beat the incumbent by more than ``tol`` so rounding cannot break a tie
    in favour of a later feature or threshold.
    """
    n_feat = vals.shape[0]
    m = s1 - s0
    parent = total * total * inv[m]
    best_gain = -np.inf
    best_f = -1
    best_pos = -1
    for f in range(n_feat):
        s = 0.0
        for i in range(min_leaf - 1):
            s += res[f, s0 + i]
        for i in range(min_leaf - 1, m - min_leaf):
            s += res[f, s0 + i]
            if vals[f, s0 + i] == vals[f, s0 + i + 1]:
                continue
            nl = i + 1
            rs = total - s
            gain = s * s * inv[nl] + rs * rs * inv[m - nl] - parent
            if gain > best_gain + tol:
                best_gain = gain
                best_f = f
                best_pos = i
    return best_f, best_pos, best_gain


@njit(cache=True)
def _grow(Xt, r, sorted_rows, max_depth, min_leaf, order, vals, res):
    """Grow one tree depth-first; node ids are assigned in preorder.

    ``sorted_rows[f]`` lists the row indices sorted by feature ``f``. The
    work arrays ``order``, ``vals`` and ``res`` (same shape) are overwritten
    and partitioned in place so each node owns one contiguous segment in
    every feature row.
    """
    n_feat, n = sorted_rows.shape
    inv = np.empty(n + 1)
    inv[0] = 0.0
    for k in range(1, n + 1):
        inv[k] = 1.0 / k
    for g in range(n_feat):
        for i in range(n):
            row = sorted_rows[g, i]
            order[g, i] = row
            vals[g, i] = Xt[g, row]
            res[g, i] = r[row]
    cap = 2 * n + 1
    if max_depth < 30:
        cap = min(cap, 2 ** (max_depth + 1) + 1)
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    count = np.zeros(cap, dtype=np.int64)
    fitted = np.empty(n)
    goes_left = np.zeros(n, dtype=np.bool_)
    buf_o = np.empty(n, dtype=order.dtype)
    buf_v = np.empty(n)
    buf_r = np.empty(n)

    # stack entries: start, end, depth, parent, is_left
    stack = np.empty((cap, 5), dtype=np.int64)
    stack[0, 0] = 0
    stack[0, 1] = n
    stack[0, 2] = 0
    stack[0, 3] = -1
    stack[0, 4] = 0
    top = 1
    n_nodes = 0
    while top > 0:
        top -= 1
        s0, s1, depth, parent, is_left = stack[top]
        node = n_nodes
        n_nodes += 1
        if parent >= 0:
            if is_left:
                left[parent] = node
            else:
                right[parent] = node
        m = s1 - s0
        # shifted sum keeps the mean exact for constant residuals
        r0 = res[0, s0]
        acc = 0.0
        sq = 0.0
        total = 0.0
        for i in range(s0, s1):
            v = res[0, i]
            acc += v - r0
            sq += v * v
            total += v
        mean = r0 + acc / m
        value[node] = mean
        count[node] = m
        split = False
        if depth < max_depth and m >= 2 * min_leaf:
            f, pos, gain = _best_split(vals, res, s0, s1, min_leaf, total, inv, 1e-12 * sq)
            if f >= 0 and gain > 1e-12 * sq:
                split = True
        if not split:
            for i in range(s0, s1):
                fitted[order[0, i]] = mean
            continue
        a = vals[f, s0 + pos]
        b = vals[f, s0 + pos + 1]
        thr = 0.5 * (a + b)
        if thr >= b:
            thr = a
        feature[node] = f
        threshold[node] = thr
        n_left = pos + 1
        for i in range(s0, s1):
            goes_left[order[f, i]] = i < s0 + n_left
        # children that cannot split only need the row used for leaf values
        nl_child, nr_child = n_left, m - n_left
        grow_on = depth + 1 < max_depth and max(nl_child, nr_child) >= 2 * min_leaf
        n_part = n_feat if grow_on else 1
        for g in range(n_part):
            il = 0
            ir = n_left
            for i in range(s0, s1):
                row = order[g, i]
                k = il if goes_left[row] else ir
                buf_o[k] = row
                buf_v[k] = vals[g, i]
                buf_r[k] = res[g, i]
                gl = goes_left[row]
                il += gl
                ir += 1 - gl
            for i in range(m):
                order[g, s0 + i] = buf_o[i]
                vals[g, s0 + i] = buf_v[i]
                res[g, s0 + i] = buf_r[i]
        mid = s0 + n_left
        # right pushed first so the left subtree is numbered next
        stack[top, 0] = mid
        stack[top, 1] = s1
        stack[top, 2] = depth + 1
        stack[top, 3] = node
        stack[top, 4] = 0
        top += 1
        stack[top, 0] = s0
        stack[top, 1] = mid
        stack[top, 2] = depth + 1
        stack[top, 3] = node
        stack[top, 4] = 1
        top += 1
    return (feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes],
            value[:n_nodes], count[:n_nodes], fitted)


@dataclass(frozen=True)
class Tree:
    """Preorder-flattened regression tree; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        def walk(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(walk(self.left[i]), walk(self.right[i]))
        return walk(0)

    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.feature < 0)

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return self.value[node]
            go_left = X[rows, np.where(inner, f, 0)] <= self.threshold[node]
            nxt = np.where(go_left, self.left[node], self.right[node])
            node = np.where(inner, nxt, node)


def fit_tree(X, residuals, max_depth: int = 6, min_samples_leaf: int = 5) -> tuple[Tree, np.ndarray]:
    """Fit one regression tree to ``residuals``.

    Returns the tree and its output on every training row.
    """
    X = np.asarray(X, dtype=float)
    r = np.ascontiguousarray(residuals, dtype=float)
    if len(r) == 0:
        raise ValueError("cannot fit a tree on zero rows")
    if max_depth < 0 or min_samples_leaf < 1:
        raise ValueError("max_depth must be >= 0 and min_samples_leaf >= 1")
    Xt = np.ascontiguousarray(X.T)
    order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)
    *arrays, fitted = _grow(Xt, r, order, max_depth, min_samples_leaf, *_work(order))
    return Tree(*arrays), fitted


def _work(order):
    return np.empty_like(order), np.empty(order.shape), np.empty(order.shape)


class GBTRegressor(RegressorMixin, BaseEstimator):
    """Squared-error gradient boosting over exact greedy regression trees.

    The model starts from the training-target mean and adds
    ``learning_rate * tree(x)`` for every tree, each tree fitted to the
    residuals left by its predecessors. There is no row or column
    subsampling and no early stopping.

    Parameters
    ----------
    n_estimators : int, default=300
    max_depth : int, default=6
    learning_rate : float, default=0.05
    min_samples_leaf : int, default=5

    Attributes
    ----------
    base_prediction_ : float
    trees_ : list of Tree
    train_loss_ : ndarray of shape (n_estimators + 1,)
        Training MSE before the first tree and after each tree.
    """

    def __init__(self, n_estimators=300, max_depth=6, learning_rate=0.05, min_samples_leaf=5):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.min_samples_leaf = min_samples_leaf

    def _check_params(self):
        if self.n_estimators < 0 or self.max_depth < 0 or self.min_samples_leaf < 1:
            raise ValueError("n_estimators, max_depth must be >= 0 and min_samples_leaf >= 1")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in (0, 1]")

    def fit(self, X, y):
        self._check_params()
        X, y = check_X_y(X, y, y_numeric=True)
        X = np.ascontiguousarray(X, dtype=float)
        self.n_features_in_ = X.shape[1]
        self.base_prediction_ = float(y.mean())
        pred = np.full(len(y), self.base_prediction_)
        order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)
        Xt = np.ascontiguousarray(X.T)
        work = _work(order)
        self.trees_ = []
        loss = [float(np.mean((y - pred) ** 2))]
        for _ in range(self.n_estimators):
            *arrays, out = _grow(Xt, y - pred, order, self.max_depth, self.min_samples_leaf, *work)
            tree = Tree(*arrays)
            self.trees_.append(tree)
            pred = pred + self.learning_rate * out
            loss.append(float(np.mean((y - pred) ** 2)))
        self.train_loss_ = np.array(loss)
        return self

    def predict(self, X):
        check_is_fitted(self, "trees_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        pred = np.full(len(X), self.base_prediction_)
        for tree in self.trees_:
            pred = pred + self.learning_rate * tree.predict(X)
        return pred

    def staged_predict(self, X):
        """Predictions after 0, 1, ..., n trees."""
        check_is_fitted(self, "trees_")
        X = check_array(X)
        pred = np.full(len(X), self.base_prediction_)
        yield pred.copy()
        for tree in self.trees_:
            pred = pred + self.learning_rate * tree.predict(X)
            yield pred.copy()

    def dumps(self) -> str:
        """Versioned plain-text serialization with preorder-flattened trees."""
        check_is_fitted(self, "trees_")
        lines = [
            FORMAT_TAG,
            f"params n_estimators={self.n_estimators} max_depth={self.max_depth} "
            f"learning_rate={self.learning_rate!r} min_samples_leaf={self.min_samples_leaf}",
            f"n_features {self.n_features_in_}",
            f"base {self.base_prediction_!r}",
            f"trees {len(self.trees_)}",
        ]
        for t in self.trees_:
            lines.append(f"tree {t.n_nodes}")
            for i in range(t.n_nodes):
                lines.append(f"{t.feature[i]} {float(t.threshold[i])!r} {t.left[i]} {t.right[i]} "
                             f"{float(t.value[i])!r} {t.n_samples[i]}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "GBTRegressor":
        lines = text.splitlines()
        if not lines or lines[0] != FORMAT_TAG:
            raise ValueError("not a boosted-tree model document")
        params = dict(kv.split("=") for kv in lines[1].split()[1:])
        est = cls(n_estimators=int(params["n_estimators"]), max_depth=int(params["max_depth"]),
                  learning_rate=float(params["learning_rate"]),
                  min_samples_leaf=int(params["min_samples_leaf"]))
        est.n_features_in_ = int(lines[2].split()[1])
        est.base_prediction_ = float(lines[3].split()[1])
        n_trees = int(lines[4].split()[1])
        pos = 5
        est.trees_ = []
        for _ in range(n_trees):
            k = int(lines[pos].split()[1])
            rows = [ln.split() for ln in lines[pos + 1:pos + 1 + k]]
            cols = list(zip(*rows))
            est.trees_.append(Tree(np.array(cols[0], dtype=np.int64), np.array(cols[1], dtype=float),
                                   np.array(cols[2], dtype=np.int64), np.array(cols[3], dtype=np.int64),
                                   np.array(cols[4], dtype=float), np.array(cols[5], dtype=np.int64)))
            pos += 1 + k
        return est
