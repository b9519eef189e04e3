"""Bagged regression forests (no per-split feature subsampling)."""

from __future__ import annotations

import numpy as np

from .tree import Tree, TreeParams, tree_build


def bootstrap_indices(n: int, seed: int, tree_index: int) -> np.ndarray:
    """Resample of size n for one tree, keyed on (seed, tree_index)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, tree_index]))
    return rng.integers(0, n, size=n)


class Forest:
    def __init__(self, trees: list[Tree], bootstraps: list[np.ndarray] | None = None):
        self.trees = trees
        self.bootstraps = bootstraps

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.zeros(len(X))
        for t in self.trees:
            out += t.predict(X)
        return out / len(self.trees)

    def to_dict(self) -> dict:
        return {"trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d: dict) -> "Forest":
        return cls([Tree.from_dict(t) for t in d["trees"]])


def forest_fit(X, y, params: TreeParams, seed: int | None = None) -> Forest:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(y) < 1:
        raise ValueError("cannot fit a forest on an empty set")
    seed = params.bootstrap_seed if seed is None else seed
    trees, boots = [], []
    for t in range(params.n_estimators):
        idx = bootstrap_indices(len(y), seed, t)
        trees.append(tree_build(X[idx], y[idx], params))
        boots.append(idx)
    return Forest(trees, boots)


def forest_predict(forest: Forest, X) -> np.ndarray:
    return forest.predict(X)
