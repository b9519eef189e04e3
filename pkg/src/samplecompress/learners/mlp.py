"""Dense ReLU network with dropout, trained on the bounded cross-entropy.

All randomness (initialization, shuffling, dropout masks) is drawn from
generators keyed on ``(seed, stream, epoch)`` so that a training run is
reproducible from its arguments alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax, softmax

from .losses import DEFAULT_P_MIN

FORMAT = "samplecompress.mlp/v1"


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class MlpParams:
    hidden: tuple[int, ...] = (32,)
    dropout_prob: float = 0.0
    learning_rate: float = 1e-2
    optimizer: str = "adam"
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    batch_size: int = 64
    max_epochs: int = 200
    patience_epochs: int = 3
    p_min: float = DEFAULT_P_MIN

    def __post_init__(self):
        if not 0.0 <= self.dropout_prob < 1.0:
            raise ValueError("dropout_prob must lie in [0, 1)")
        if any(w < 1 for w in self.hidden):
            raise ValueError("layer widths must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")


def _rng(*key):
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


class Mlp:
    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray], dropout_prob: float = 0.0):
        self.weights = weights
        self.biases = biases
        self.dropout_prob = dropout_prob

    @property
    def n_classes(self) -> int:
        return self.weights[-1].shape[1]

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.dropout_prob)

    def forward(self, X, rng=None):
        """Logits and the cache needed by ``backward``.

        Dropout is applied only when ``rng`` is given (training mode).
        """
        a = np.asarray(X, dtype=float)
        cache = []
        last = len(self.weights) - 1
        for layer, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ W + b
            if layer == last:
                cache.append((a, None, None))
                return z, cache
            h = np.maximum(z, 0.0)
            mask = None
            if rng is not None and self.dropout_prob > 0:
                keep = 1.0 - self.dropout_prob
                mask = (rng.random(h.shape) < keep) / keep
                h = h * mask
            cache.append((a, z, mask))
            a = h

    def predict_logits(self, X) -> np.ndarray:
        return self.forward(X)[0]

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.predict_logits(X), axis=1)

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_logits(X), axis=1)

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "dropout_prob": self.dropout_prob,
            "layers": [
                {"shape": list(W.shape), "weights": W.ravel().tolist(), "bias": b.tolist()}
                for W, b in zip(self.weights, self.biases)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Mlp":
        if d.get("format") != FORMAT:
            raise ValueError(f"unsupported model format {d.get('format')!r}")
        ws = [np.asarray(l["weights"], dtype=float).reshape(l["shape"]) for l in d["layers"]]
        bs = [np.asarray(l["bias"], dtype=float) for l in d["layers"]]
        return cls(ws, bs, d.get("dropout_prob", 0.0))


def mlp_init(n_in: int, n_out: int, params: MlpParams, seed: int) -> Mlp:
    """He-initialized network; this is also the untrained P2L start h0."""
    widths = [n_in, *params.hidden, n_out]
    rng = _rng(seed, 0)
    ws, bs = [], []
    for a, b in zip(widths[:-1], widths[1:]):
        ws.append(rng.normal(0.0, math.sqrt(2.0 / a), size=(a, b)))
        bs.append(np.zeros(b))
    return Mlp(ws, bs, params.dropout_prob)


def mlp_backward(model: Mlp, logits, cache, y, p_min=DEFAULT_P_MIN):
    """Mean bounded cross-entropy over the batch and its gradients.

    Samples whose log-probability is clamped at ln(p_min) contribute no
    gradient.
    """
    y = np.asarray(y, dtype=int)
    n = len(y)
    logp = log_softmax(logits, axis=1)
    picked = logp[np.arange(n), y]
    floor = math.log(p_min)
    loss = float(np.mean(-np.maximum(floor, picked)))
    active = (picked >= floor).astype(float)
    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    delta *= (active / n)[:, None]
    gw, gb = [None] * len(model.weights), [None] * len(model.weights)
    for layer in range(len(model.weights) - 1, -1, -1):
        a, _, _ = cache[layer]
        gw[layer] = a.T @ delta
        gb[layer] = delta.sum(axis=0)
        if layer == 0:
            break
        _, z_prev, mask_prev = cache[layer - 1]
        delta = delta @ model.weights[layer].T
        if mask_prev is not None:
            delta = delta * mask_prev
        delta = delta * (z_prev > 0)
    return loss, gw, gb


def mlp_loss_and_grads(model: Mlp, X, y, p_min=DEFAULT_P_MIN, rng=None):
    logits, cache = model.forward(X, rng)
    return mlp_backward(model, logits, cache, y, p_min)


class Optimizer:
    """Adam or plain SGD over a model's parameter list."""

    def __init__(self, model: Mlp, params: MlpParams):
        self.params = params
        self.t = 0
        shapes = [w.shape for w in model.weights] + [b.shape for b in model.biases]
        self.m1 = [np.zeros(s) for s in shapes]
        self.m2 = [np.zeros(s) for s in shapes]

    def step(self, model: Mlp, gw, gb):
        p = self.params
        tensors = model.weights + model.biases
        grads = list(gw) + list(gb)
        if p.optimizer == "sgd":
            for x, g in zip(tensors, grads):
                x -= p.learning_rate * g
            return
        self.t += 1
        b1, b2 = p.betas
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for x, g, m1, m2 in zip(tensors, grads, self.m1, self.m2):
            m1 *= b1
            m1 += (1.0 - b1) * g
            m2 *= b2
            m2 += (1.0 - b2) * g * g
            x -= p.learning_rate * (m1 / c1) / (np.sqrt(m2 / c2) + p.adam_eps)


def mlp_step(model: Mlp, opt: Optimizer, X, y, rng=None) -> float:
    loss, gw, gb = mlp_loss_and_grads(model, X, y, opt.params.p_min, rng)
    if not math.isfinite(loss):
        raise TrainingDiverged(f"non-finite training loss {loss}")
    opt.step(model, gw, gb)
    return loss


def mlp_train(model: Mlp, X, y, params: MlpParams, seed: int, stream: int = 0) -> Mlp:
    """Continue training a copy of ``model`` on (X, y).

    Stops after ``max_epochs`` or once the full-set loss on (X, y) has not
    decreased for ``patience_epochs`` epochs. Only (X, y) is looked at.
    """
    model = model.copy()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if len(y) == 0:
        raise ValueError("cannot train on an empty set")
    opt = Optimizer(model, params)
    best, stale = math.inf, 0
    for epoch in range(params.max_epochs):
        rng = _rng(seed, 1, stream, epoch)
        order = rng.permutation(len(y))
        for start in range(0, len(y), params.batch_size):
            batch = order[start:start + params.batch_size]
            mlp_step(model, opt, X[batch], y[batch], rng)
        loss = mlp_loss_and_grads(model, X, y, params.p_min)[0]
        if not math.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss after epoch {epoch}")
        if loss < best:
            best, stale = loss, 0
        else:
            stale += 1
            if stale >= params.patience_epochs:
                break
    return model
