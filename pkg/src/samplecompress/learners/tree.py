"""CART regression trees with variance-reduction splits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TreeParams:
    max_depth: int | None = 10
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    n_estimators: int = 50
    bootstrap_seed: int = 0

    def __post_init__(self):
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")


class Tree:
    """Binary regression tree stored as flat node arrays.

    Node ``i`` is a leaf when ``feature[i] == -1``; otherwise rows with
    ``x[feature[i]] <= threshold[i]`` go to ``left[i]``.
    """

    def __init__(self, feature, threshold, left, right, value):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=float)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=float)

    @property
    def n_nodes(self) -> int:
        return len(self.value)

    def depth(self) -> int:
        def rec(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(rec(self.left[i]), rec(self.right[i]))
        return rec(0)

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.nonzero(active)[0]
            f = self.feature[node[idx]]
            go_left = X[idx, f] <= self.threshold[node[idx]]
            node[idx] = np.where(go_left, self.left[node[idx]], self.right[node[idx]])
            active = self.feature[node] >= 0
        return self.value[node]

    def to_dict(self) -> dict:
        def rec(i):
            if self.feature[i] < 0:
                return {"value": float(self.value[i])}
            return {
                "feature": int(self.feature[i]),
                "threshold": float(self.threshold[i]),
                "value": float(self.value[i]),
                "left": rec(self.left[i]),
                "right": rec(self.right[i]),
            }
        return rec(0)

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        feature, threshold, left, right, value = [], [], [], [], []

        def rec(node):
            i = len(value)
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(node["value"])
            if "feature" in node:
                feature[i] = node["feature"]
                threshold[i] = node["threshold"]
                left[i] = rec(node["left"])
                right[i] = rec(node["right"])
            return i

        rec(d)
        return cls(feature, threshold, left, right, value)


def _best_split(X, y, min_leaf):
    """Best (feature, threshold, gain) by weighted SSE reduction.

    Candidates are midpoints between consecutive distinct sorted values.
    Ties keep the lowest feature index, then the lowest threshold.
    """
    n, d = X.shape
    total_sum = y.sum()
    parent_sse = float(((y - y.mean()) ** 2).sum())
    best = (-1, 0.0, 0.0)
    for f in range(d):
        order = np.argsort(X[:, f], kind="stable")
        xs, ys = X[order, f], y[order]
        csum = np.cumsum(ys)
        csq = np.cumsum(ys * ys)
        n_left = np.arange(1, n)
        # split after position j (0-based) puts rows 0..j on the left
        valid = xs[1:] > xs[:-1]
        valid &= (n_left >= min_leaf) & (n - n_left >= min_leaf)
        if not valid.any():
            continue
        sl, ql = csum[:-1], csq[:-1]
        sr, qr = total_sum - sl, csq[-1] - ql
        sse = (ql - sl * sl / n_left) + (qr - sr * sr / (n - n_left))
        gain = np.where(valid, parent_sse - sse, -np.inf)
        j = int(np.argmax(gain))
        if gain[j] > best[2]:
            best = (f, 0.5 * (xs[j] + xs[j + 1]), float(gain[j]))
    return best


def tree_build(X, y, params: TreeParams) -> Tree:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(y) < 1:
        raise ValueError("cannot build a tree on an empty set")
    feature, threshold, left, right, value = [], [], [], [], []
    # explicit stack keeps node numbering in pre-order
    stack = [(np.arange(len(y)), 0, None, None)]
    while stack:
        rows, depth, parent, side = stack.pop()
        i = len(value)
        if parent is not None:
            (left if side == "l" else right)[parent] = i
        ys = y[rows]
        value.append(float(ys.mean()))
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        if (
            len(rows) < params.min_samples_split
            or (params.max_depth is not None and depth >= params.max_depth)
            or np.all(ys == ys[0])
        ):
            continue
        f, thr, gain = _best_split(X[rows], ys, params.min_samples_leaf)
        if f < 0 or gain <= 1e-12 * max(1.0, float(np.dot(ys, ys))):
            continue
        feature[i] = f
        threshold[i] = thr
        go_left = X[rows, f] <= thr
        stack.append((rows[~go_left], depth + 1, i, "r"))
        stack.append((rows[go_left], depth + 1, i, "l"))
    return Tree(feature, threshold, left, right, value)
