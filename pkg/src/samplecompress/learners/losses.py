"""Per-sample losses and their declared ranges."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax

DEFAULT_P_MIN = 1e-5


@dataclass(frozen=True)
class TargetBounds:
    """Assumed range of regression targets, and the sub-Gaussian scale."""

    y_lo: float
    y_hi: float
    margin_frac: float
    sigma: float

    @property
    def loss_max(self) -> float:
        return self.y_hi - self.y_lo


@dataclass(frozen=True)
class LossSpec:
    kind: str  # "zero_one" | "bounded_xent" | "abs_error"
    p_min: float = DEFAULT_P_MIN
    bounds: TargetBounds | None = None

    def __post_init__(self):
        if self.kind not in ("zero_one", "bounded_xent", "abs_error"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.kind == "abs_error" and self.bounds is None:
            raise ValueError("abs_error loss needs target bounds")
        if self.kind == "bounded_xent" and not 0 < self.p_min < 1:
            raise ValueError("p_min must lie in (0, 1)")

    @classmethod
    def zero_one(cls) -> "LossSpec":
        return cls("zero_one")

    @classmethod
    def bounded_xent(cls, p_min: float = DEFAULT_P_MIN) -> "LossSpec":
        return cls("bounded_xent", p_min=p_min)

    @classmethod
    def abs_error(cls, bounds: TargetBounds) -> "LossSpec":
        return cls("abs_error", bounds=bounds)

    @property
    def loss_max(self) -> float:
        if self.kind == "zero_one":
            return 1.0
        if self.kind == "bounded_xent":
            return -math.log(self.p_min)
        return max(self.bounds.loss_max, 1e-12)

    def per_sample(self, output: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Loss of each row. ``output`` is logits for classification
        losses and real predictions for ``abs_error``."""
        if self.kind == "zero_one":
            return zero_one_loss(output, y)
        if self.kind == "bounded_xent":
            return bounded_cross_entropy(output, y, self.p_min)
        return absolute_error(output, y)


def zero_one_loss(logits, y):
    logits = np.asarray(logits, dtype=float)
    return (np.argmax(logits, axis=1) != np.asarray(y)).astype(float)


def bounded_cross_entropy(logits, y, p_min=DEFAULT_P_MIN):
    """-max(ln p_min, log softmax(logits)[y]); lies in [0, -ln p_min]."""
    logp = log_softmax(np.asarray(logits, dtype=float), axis=1)
    picked = logp[np.arange(len(logp)), np.asarray(y, dtype=int)]
    return -np.maximum(math.log(p_min), picked)


def absolute_error(pred, y):
    return np.abs(np.asarray(pred, dtype=float) - np.asarray(y, dtype=float))


def risk_eval(spec: LossSpec, output, y) -> float:
    """Mean per-sample loss."""
    losses = spec.per_sample(output, y)
    return float(np.mean(losses)) if len(losses) else 0.0


def rms_risk_eval(pred, y) -> float:
    """Root-mean-squared error; reporting and patience only."""
    d = np.asarray(pred, dtype=float) - np.asarray(y, dtype=float)
    return float(np.sqrt(np.mean(d * d))) if len(d) else 0.0
