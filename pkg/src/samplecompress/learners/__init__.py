"""Deterministic learners used as reconstruction functions.

A learner's ``fit(X, y, seed)`` must be a pure function of its
arguments: that is what makes a model rebuilt from a compression set
identical to the one P2L returned.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .forest import Forest, bootstrap_indices, forest_fit, forest_predict
from .losses import (
    LossSpec,
    TargetBounds,
    absolute_error,
    bounded_cross_entropy,
    risk_eval,
    rms_risk_eval,
    zero_one_loss,
)
from .mlp import Mlp, MlpParams, TrainingDiverged, mlp_init, mlp_loss_and_grads, mlp_train
from .tree import Tree, TreeParams, tree_build

MODEL_FORMAT_VERSION = 1


class ConstantModel:
    """Predicts a fixed value everywhere (the regression start h0)."""

    def __init__(self, value: float = 0.0):
        self.value = float(value)

    def predict(self, X) -> np.ndarray:
        return np.full(len(X), self.value)

    def to_dict(self) -> dict:
        return {"value": self.value}


@dataclass(frozen=True)
class TreeLearner:
    params: TreeParams = TreeParams()
    task = "regress"
    name = "tree"

    def initial(self, n_features, n_outputs, seed):
        return ConstantModel(0.0)

    def fit(self, X, y, seed):
        return tree_build(X, y, self.params)

    def refit(self, model, X, y, seed, stream):
        return self.fit(X, y, seed)


@dataclass(frozen=True)
class ForestLearner:
    params: TreeParams = TreeParams()
    task = "regress"
    name = "forest"

    def initial(self, n_features, n_outputs, seed):
        return ConstantModel(0.0)

    def fit(self, X, y, seed):
        return forest_fit(X, y, self.params, seed=self.params.bootstrap_seed + seed)

    def refit(self, model, X, y, seed, stream):
        return self.fit(X, y, seed)


@dataclass(frozen=True)
class MlpLearner:
    params: MlpParams = MlpParams()
    task = "classify"
    name = "mlp"

    def initial(self, n_features, n_outputs, seed):
        return mlp_init(n_features, n_outputs, self.params, seed)

    def fit(self, X, y, seed, n_classes=None):
        n_classes = int(np.max(y)) + 1 if n_classes is None else n_classes
        model = self.initial(np.asarray(X).shape[1], max(n_classes, 2), seed)
        return mlp_train(model, X, y, self.params, seed)

    def refit(self, model, X, y, seed, stream):
        """Warm start: keep training the current parameters."""
        return mlp_train(model, X, y, self.params, seed, stream)


def learner_fit(learner, X, y, seed: int = 0):
    X = np.asarray(X)
    if len(X) == 0:
        raise ValueError("learner_fit needs a non-empty training set")
    return learner.fit(X, y, seed)


def model_to_json(model) -> str:
    if isinstance(model, Tree):
        body = {"type": "tree", "root": model.to_dict()}
    elif isinstance(model, Forest):
        body = {"type": "forest", **model.to_dict()}
    elif isinstance(model, Mlp):
        body = {"type": "mlp", **model.to_dict()}
    elif isinstance(model, ConstantModel):
        body = {"type": "constant", **model.to_dict()}
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    return json.dumps({"version": MODEL_FORMAT_VERSION, **body}, sort_keys=True)


def model_from_json(text: str):
    d = json.loads(text)
    if d.get("version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model version {d.get('version')!r}")
    kind = d["type"]
    if kind == "tree":
        return Tree.from_dict(d["root"])
    if kind == "forest":
        return Forest.from_dict(d)
    if kind == "mlp":
        return Mlp.from_dict(d)
    if kind == "constant":
        return ConstantModel(d["value"])
    raise ValueError(f"unknown model type {kind!r}")


__all__ = [
    "ConstantModel", "Forest", "ForestLearner", "LossSpec", "Mlp", "MlpLearner",
    "MlpParams", "TargetBounds", "TrainingDiverged", "Tree", "TreeLearner", "TreeParams",
    "absolute_error", "bootstrap_indices", "bounded_cross_entropy", "forest_fit",
    "forest_predict", "learner_fit", "mlp_init", "mlp_loss_and_grads", "mlp_train",
    "model_from_json", "model_to_json", "risk_eval", "rms_risk_eval", "tree_build",
    "zero_one_loss",
]
