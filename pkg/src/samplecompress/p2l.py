"""Pick-To-Learn: grow a compression set by repeatedly adding the points
the current model handles worst, retraining on the set after each pick.

Trees and forests are refit from scratch on the sorted compression set.
Networks keep training their current parameters (warm start), so their
reconstruction replays the recorded pick batches in order; either way the
model depends on the compression set (and its pick order) only.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import bounds
from .bounds import BoundDomainError, BoundInputs, BoundKind, Certificate
from .data import Dataset
from .learners.losses import (
    LossSpec,
    absolute_error,
    bounded_cross_entropy,
    rms_risk_eval,
    zero_one_loss,
)

log = logging.getLogger(__name__)

STOP_XENT = -math.log(0.5)
TRACE_COLUMNS = ["iteration", "m", "complement_loss", "kl_bound", "binom_bound", "p2l_bound", "val_loss"]


@dataclass(frozen=True)
class IndexVector:
    """Sorted 0-based positions into a parent set of size ``parent_size``."""

    indices: tuple[int, ...]
    parent_size: int

    def __post_init__(self):
        idx = self.indices
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("indices must be strictly increasing")
        if idx and (idx[0] < 0 or idx[-1] >= self.parent_size):
            raise ValueError("index out of range")

    @classmethod
    def from_mask(cls, mask) -> "IndexVector":
        return cls(tuple(int(i) for i in np.nonzero(mask)[0]), len(mask))

    def __len__(self):
        return len(self.indices)

    def complement(self) -> np.ndarray:
        mask = np.ones(self.parent_size, dtype=bool)
        mask[list(self.indices)] = False
        return np.nonzero(mask)[0]

    def one_based(self) -> list[int]:
        return [i + 1 for i in self.indices]


@dataclass(frozen=True)
class P2LConfig:
    loss: LossSpec
    pick_batch: int = 1
    stop_threshold: float = STOP_XENT
    patience: int = 10
    max_iterations: int | None = None
    seed: int = 0
    delta: float = 0.01
    lambda_mode: float | None = None  # None: grid search over lambda
    p2l_horizon: str = "iterations"  # or "n"

    def __post_init__(self):
        if self.pick_batch < 1:
            raise ValueError("pick_batch must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.p2l_horizon not in ("iterations", "n"):
            raise ValueError("p2l_horizon must be 'iterations' or 'n'")


@dataclass
class Checkpoint:
    iteration: int
    compression: IndexVector
    picks: list[list[int]]
    complement_loss_mean: float
    complement_rms: float | None = None
    complement_xent: float | None = None
    validation_loss: float | None = None
    certificates: list[Certificate] = field(default_factory=list)
    omitted: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return len(self.compression)

    def certificate(self, kind: BoundKind) -> Certificate | None:
        for c in self.certificates:
            if c.kind == kind:
                return c
        return None

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "m": self.m,
            "compression": self.compression.one_based(),
            "complement_loss": self.complement_loss_mean,
            "complement_rms": self.complement_rms,
            "complement_xent": self.complement_xent,
            "val_loss": self.validation_loss,
            "certificates": [c.to_dict() for c in self.certificates],
            "omitted": dict(self.omitted),
        }


@dataclass
class CompressionTrace:
    n: int
    checkpoints: list[Checkpoint]
    models: list
    status: str  # "converged" | "unconverged" | "exhausted" | "patience"
    returned_iteration: int

    @property
    def returned(self) -> Checkpoint:
        return self.checkpoints[self.returned_iteration]

    @property
    def model(self):
        return self.models[self.returned_iteration]

    @property
    def final(self) -> Checkpoint:
        return self.checkpoints[-1]


# ---------------------------------------------------------------------------
# certification


def certify_checkpoint(
    checkpoint: Checkpoint,
    n: int,
    delta: float,
    loss: LossSpec,
    lambda_mode: float | None = None,
    p2l_horizon: str = "iterations",
) -> tuple[list[Certificate], dict]:
    """Certificates valid for this checkpoint, plus reasons for omitted ones."""
    certs, omitted = [], {}
    m = checkpoint.m
    q = checkpoint.complement_loss_mean
    loss_max = loss.loss_max
    if q > loss_max:
        omitted["all"] = f"complement loss {q} exceeds the declared loss range {loss_max}"
        return certs, omitted
    inputs = BoundInputs(n=n, m=m, loss_complement=q, delta=delta)
    if loss_max == 1.0:
        certs.append(bounds.kl_compression_bound(inputs))
    else:
        certs.append(bounds.rescaled_kl_bound(inputs, loss_max))

    sigma = loss.bounds.sigma if loss.kind == "abs_error" else loss_max / 2.0
    if m < n:
        if lambda_mode is None:
            certs.append(bounds.linear_compression_bound_grid(inputs, sigma, loss_max=loss_max))
        else:
            certs.append(bounds.linear_compression_bound(inputs, lambda_mode, sigma, loss_max))

    if loss.kind == "zero_one":
        try:
            certs.append(bounds.binomial_approx_bound(inputs))
        except BoundDomainError as e:
            omitted[BoundKind.BINOMIAL_APPROX.value] = str(e)
        if bounds.error_count(inputs) == 0 and q == 0.0:
            horizon = n if p2l_horizon == "n" else max(checkpoint.iteration, 1)
            certs.append(bounds.p2l_bound(m, n, delta, horizon=horizon))
        else:
            omitted[BoundKind.P2L.value] = "P2L bound needs zero complement error"
    else:
        omitted[BoundKind.P2L.value] = "P2L bound covers the zero-one loss in the consistent case only"
    return certs, omitted


def _certify(cp: Checkpoint, n: int, cfg: P2LConfig, loss: LossSpec):
    cp.certificates, cp.omitted = certify_checkpoint(cp, n, cfg.delta, loss, cfg.lambda_mode, cfg.p2l_horizon)


# ---------------------------------------------------------------------------
# reconstruction


def _is_warm(learner) -> bool:
    return getattr(learner, "name", "") == "mlp"


def reconstruct(dataset: Dataset, learner, picks: list[list[int]], seed: int, n_classes: int | None = None):
    """Rebuild a model from the compression set alone.

    ``picks`` lists the indices added at each iteration, in order. Only the
    rows named in ``picks`` are read from ``dataset``.
    """
    chosen = sorted(i for batch in picks for i in batch)
    if not chosen:
        if _is_warm(learner):
            return learner.initial(dataset.n_features, n_classes or int(dataset.y.max()) + 1, seed)
        return learner.initial(dataset.n_features, 1, seed)
    if not _is_warm(learner):
        return learner.fit(dataset.X[chosen], dataset.y[chosen], seed)
    model = learner.initial(dataset.n_features, n_classes or int(dataset.y.max()) + 1, seed)
    so_far: list[int] = []
    for t, batch in enumerate(picks, start=1):
        so_far = sorted(so_far + list(batch))
        model = learner.refit(model, dataset.X[so_far], dataset.y[so_far], seed, t)
    return model


# ---------------------------------------------------------------------------
# classification


def _top_picks(losses, idx, threshold, r):
    """Up to r complement indices with loss >= threshold, worst first,
    ties broken by lowest index."""
    order = np.lexsort((idx, -losses))
    order = order[losses[order] >= threshold]
    return [int(i) for i in idx[order[:r]]]


def p2l_classify(dataset: Dataset, learner, cfg: P2LConfig, val: Dataset | None = None) -> CompressionTrace:
    X, y = dataset.X, np.asarray(dataset.y, dtype=np.int64)
    n = len(y)
    n_classes = max(int(y.max()) + 1, 2)
    max_iter = n if cfg.max_iterations is None else cfg.max_iterations
    xent = LossSpec.bounded_xent(cfg.loss.p_min) if cfg.loss.kind == "bounded_xent" else LossSpec.bounded_xent()
    zero_one = LossSpec.zero_one()

    model = learner.initial(X.shape[1], n_classes, cfg.seed)
    in_set = np.zeros(n, dtype=bool)
    picks: list[list[int]] = []
    checkpoints, models = [], []

    def record(iteration, model):
        comp = np.nonzero(~in_set)[0]
        logits = model.predict_logits(X[comp]) if len(comp) else np.zeros((0, n_classes))
        xl = bounded_cross_entropy(logits, y[comp], xent.p_min)
        err = zero_one_loss(logits, y[comp])
        val_loss = None
        if val is not None and len(val):
            val_loss = float(np.mean(zero_one_loss(model.predict_logits(val.X), val.y)))
        cp = Checkpoint(
            iteration=iteration,
            compression=IndexVector.from_mask(in_set),
            picks=[list(b) for b in picks],
            complement_loss_mean=float(err.mean()) if len(comp) else 0.0,
            complement_xent=float(xl.mean()) if len(comp) else 0.0,
            validation_loss=val_loss,
        )
        _certify(cp, n, cfg, zero_one)
        checkpoints.append(cp)
        models.append(model)
        return comp, xl

    comp, xl = record(0, model)
    status = "unconverged"
    iteration = 0
    while True:
        if len(comp) == 0:
            status = "exhausted"
            break
        if xl.max() < cfg.stop_threshold:
            status = "converged"
            break
        if iteration >= max_iter:
            log.warning("P2L stopped at the iteration cap %d without converging", max_iter)
            break
        batch = _top_picks(xl, comp, cfg.stop_threshold, cfg.pick_batch)
        in_set[batch] = True
        picks.append(batch)
        iteration += 1
        rows = np.nonzero(in_set)[0]
        model = learner.refit(model, X[rows], y[rows], cfg.seed, iteration)
        comp, xl = record(iteration, model)
    return CompressionTrace(n, checkpoints, models, status, len(checkpoints) - 1)


# ---------------------------------------------------------------------------
# regression


def p2l_regress(dataset: Dataset, learner, cfg: P2LConfig, val: Dataset | None = None) -> CompressionTrace:
    """Regression P2L with patience on the complement RMSE.

    The returned model is the checkpoint with the lowest complement RMSE;
    the trace keeps every checkpoint up to the stop.
    """
    if cfg.loss.kind != "abs_error":
        raise ValueError("regression P2L needs an abs_error loss")
    X, y = dataset.X, np.asarray(dataset.y, dtype=float)
    n = len(y)
    max_iter = n if cfg.max_iterations is None else cfg.max_iterations
    model = learner.initial(X.shape[1], 1, cfg.seed)
    in_set = np.zeros(n, dtype=bool)
    picks: list[list[int]] = []
    checkpoints, models = [], []

    def record(iteration, model):
        comp = np.nonzero(~in_set)[0]
        pred = model.predict(X[comp]) if len(comp) else np.zeros(0)
        err = absolute_error(pred, y[comp])
        cp = Checkpoint(
            iteration=iteration,
            compression=IndexVector.from_mask(in_set),
            picks=[list(b) for b in picks],
            complement_loss_mean=float(err.mean()) if len(comp) else 0.0,
            complement_rms=rms_risk_eval(pred, y[comp]),
            validation_loss=rms_risk_eval(model.predict(val.X), val.y) if val is not None and len(val) else None,
        )
        _certify(cp, n, cfg, cfg.loss)
        checkpoints.append(cp)
        models.append(model)
        return comp, err

    comp, err = record(0, model)
    pick = int(comp[np.argmax(err)])
    best, best_iter, counter = math.inf, 0, 0
    status = "patience"
    iteration = 0
    while counter <= cfg.patience:
        if iteration >= max_iter:
            status = "unconverged"
            break
        in_set[pick] = True
        picks.append([pick])
        iteration += 1
        rows = np.nonzero(in_set)[0]
        model = learner.refit(model, X[rows], y[rows], cfg.seed, iteration)
        comp, err = record(iteration, model)
        if len(comp) == 0:
            status = "exhausted"
            break
        pick = int(comp[np.argmax(err)])
        rms = checkpoints[-1].complement_rms
        if rms < best:
            best, best_iter, counter = rms, iteration, 0
        else:
            counter += 1
    return CompressionTrace(n, checkpoints, models, status, best_iter)


# ---------------------------------------------------------------------------
# checkpoint selection and trace files


def select_checkpoint(trace_or_rows, criterion: str = "min-kl"):
    """Pick a checkpoint by criterion: "final", "min-kl" or "min-val".

    Accepts a CompressionTrace or a list of trace-CSV rows; ties go to
    the earliest iteration.
    """
    items = trace_or_rows.checkpoints if isinstance(trace_or_rows, CompressionTrace) else list(trace_or_rows)
    if not items:
        raise ValueError("empty trace")
    if criterion == "final":
        return items[-1]

    def key(item):
        if isinstance(item, Checkpoint):
            if criterion == "min-kl":
                c = item.certificate(BoundKind.KL)
                return None if c is None else c.value
            return item.validation_loss
        v = item.get("kl_bound" if criterion == "min-kl" else "val_loss")
        return None if v in (None, "") else float(v)

    if criterion not in ("min-kl", "min-val"):
        raise ValueError(f"unknown criterion {criterion!r}")
    best, best_v = None, math.inf
    for item in items:
        v = key(item)
        if v is not None and v < best_v:
            best, best_v = item, v
    if best is None:
        raise ValueError(f"no checkpoint carries a value for {criterion}")
    return best


def trace_rows(trace: CompressionTrace) -> list[dict]:
    rows = []
    for cp in trace.checkpoints:
        def val(kind):
            c = cp.certificate(kind)
            return "" if c is None else repr(c.value)
        rows.append({
            "iteration": str(cp.iteration),
            "m": str(cp.m),
            "complement_loss": repr(cp.complement_loss_mean),
            "kl_bound": val(BoundKind.KL),
            "binom_bound": val(BoundKind.BINOMIAL_APPROX),
            "p2l_bound": val(BoundKind.P2L),
            "val_loss": "" if cp.validation_loss is None else repr(cp.validation_loss),
        })
    return rows


def write_trace_csv(trace: CompressionTrace, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(trace_rows(trace))


class TraceFormatError(ValueError):
    pass


def read_trace_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != TRACE_COLUMNS:
            raise TraceFormatError(f"{path}: expected header {','.join(TRACE_COLUMNS)}")
        rows = list(reader)
    for i, r in enumerate(rows, start=2):
        try:
            int(r["iteration"])
            int(r["m"])
            for k in TRACE_COLUMNS[2:]:
                if r[k] not in ("", None):
                    float(r[k])
        except (TypeError, ValueError) as e:
            raise TraceFormatError(f"{path}: line {i}: {e}") from e
    if not rows:
        raise TraceFormatError(f"{path}: no rows")
    return rows
