"""Datasets: MNIST IDX files, regression CSVs, splits and synthetic data."""

from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .learners.losses import TargetBounds

log = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataError(Exception):
    pass


class IdxParseError(DataError):
    def __init__(self, path, offset, message):
        super().__init__(f"{path}: byte {offset}: {message}")
        self.path = str(path)
        self.offset = offset


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.X) != len(self.y):
            raise DataError(f"{len(self.X)} feature rows but {len(self.y)} targets")
        if not np.all(np.isfinite(self.X)) or not np.all(np.isfinite(self.y)):
            raise DataError("dataset contains non-finite values")

    def __len__(self):
        return len(self.y)

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def subset(self, indices, **meta) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.X[idx], self.y[idx], {**self.meta, **meta})


# ---------------------------------------------------------------------------
# IDX


def _read_header(path, raw, magic, ndim):
    if len(raw) < 4:
        raise IdxParseError(path, 0, "truncated header")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise IdxParseError(path, 0, f"unexpected magic 0x{found:08x} (expected 0x{magic:08x})")
    end = 4 + 4 * ndim
    if len(raw) < end:
        raise IdxParseError(path, len(raw), "truncated header")
    return struct.unpack(">" + "I" * ndim, raw[4:end]), end


def load_idx(images_path, labels_path, **meta) -> Dataset:
    """Read an IDX image/label pair; pixels are scaled to [0, 1]."""
    raw_img = Path(images_path).read_bytes()
    raw_lab = Path(labels_path).read_bytes()
    (n, rows, cols), off = _read_header(images_path, raw_img, IDX_IMAGES_MAGIC, 3)
    need = off + n * rows * cols
    if len(raw_img) < need:
        raise IdxParseError(images_path, len(raw_img), f"truncated pixel data, expected {need} bytes")
    (n_lab,), off_lab = _read_header(labels_path, raw_lab, IDX_LABELS_MAGIC, 1)
    if len(raw_lab) < off_lab + n_lab:
        raise IdxParseError(labels_path, len(raw_lab), f"truncated labels, expected {off_lab + n_lab} bytes")
    if n_lab != n:
        raise IdxParseError(labels_path, 4, f"label count {n_lab} != image count {n}")
    pixels = np.frombuffer(raw_img, dtype=np.uint8, count=n * rows * cols, offset=off)
    X = pixels.reshape(n, rows * cols).astype(float) / 255.0
    y = np.frombuffer(raw_lab, dtype=np.uint8, count=n, offset=off_lab).astype(np.int64)
    if n == 0:
        raise IdxParseError(images_path, 4, "file holds no images")
    return Dataset(X, y, {"source": str(images_path), **meta})


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray) -> None:
    """Write uint8 images (n, rows, cols) and labels in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, n) + np.asarray(labels, dtype=np.uint8).tobytes())


def filter_digit_pair(d: Dataset, a: int, b: int) -> Dataset:
    """Keep labels a and b (order preserved); the smaller maps to 0, the larger to 1."""
    if a == b:
        raise DataError(f"digit pair needs two distinct digits, got ({a}, {b})")
    lo, hi = sorted((a, b))
    keep = np.nonzero((d.y == lo) | (d.y == hi))[0]
    if len(keep) == 0:
        raise DataError(f"no rows labelled {lo} or {hi}")
    return Dataset(d.X[keep], (d.y[keep] == hi).astype(np.int64), {**d.meta, "pair": [lo, hi]})


# ---------------------------------------------------------------------------
# CSV


def load_csv(path) -> Dataset:
    """Header row, comma separated, last column is the target."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    if len(rows) < 2:
        raise DataError(f"{path}: need a header and at least one row")
    try:
        arr = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as e:
        raise DataError(f"{path}: {e}") from e
    if arr.ndim != 2 or arr.shape[1] < 2 or len(arr) == 0:
        raise DataError(f"{path}: need at least one feature column and a target column")
    return Dataset(arr[:, :-1], arr[:, -1], {"source": str(path), "columns": rows[0]})


# ---------------------------------------------------------------------------
# splits and target bounds


def split(d: Dataset, seed: int, has_builtin_test: bool = False):
    """Seeded shuffle, then floor(10%) test (unless built in) and floor(10%) of
    the rest for validation. Returns (train, val, test); test is None when
    the dataset has its own."""
    n = len(d)
    if n < 10:
        raise DataError(f"split needs at least 10 rows, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    test = None
    if not has_builtin_test:
        n_test = n // 10
        test_idx, perm = perm[:n_test], perm[n_test:]
        test = d.subset(np.sort(test_idx), role="test", split_seed=seed)
    n_val = len(perm) // 10
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    train = d.subset(np.sort(train_idx), role="train", split_seed=seed)
    val = d.subset(np.sort(val_idx), role="val", split_seed=seed)
    return train, val, test


def target_bounds(train_targets, p: float = 0.1) -> TargetBounds:
    """Widen the observed target range by ``p`` of itself on each side.

    A negative lower bound is clamped to 0 when every observed target is
    non-negative.
    """
    y = np.asarray(train_targets, dtype=float)
    if len(y) < 2:
        raise DataError("target_bounds needs at least two targets")
    lo, hi = float(y.min()), float(y.max())
    rng = hi - lo
    if rng == 0:
        log.warning("constant targets; the loss range is degenerate")
    y_lo, y_hi = lo - p * rng, hi + p * rng
    if y_lo < 0 and lo >= 0:
        y_lo = 0.0
    if y_hi - y_lo < 1e-12:
        y_hi = y_lo + 1e-12
    return TargetBounds(y_lo, y_hi, p, max(rng / 2.0, 1e-12))


# ---------------------------------------------------------------------------
# synthetic


def synth_classify(n: int, d: int = 2, separation: float = 3.0, seed: int = 0) -> Dataset:
    """Two unit Gaussians centred at -separation*e1 (label 0) and +separation*e1 (label 1)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 101]))
    y = rng.integers(0, 2, size=n)
    X = rng.normal(size=(n, d))
    X[:, 0] += np.where(y == 1, separation, -separation)
    return Dataset(X, y.astype(np.int64), {"source": f"synth-classify:n={n},d={d},separation={separation}", "seed": seed})


def synth_regress(n: int, d: int = 3, noise: float = 0.1, seed: int = 0) -> Dataset:
    """y = w.x + noise * eps with seeded w and standard normal eps."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 202]))
    w = rng.normal(size=d)
    X = rng.uniform(-1.0, 1.0, size=(n, d))
    y = X @ w + noise * rng.normal(size=n)
    return Dataset(X, y, {"source": f"synth-regress:n={n},d={d},noise={noise}", "seed": seed, "w": w.tolist()})
