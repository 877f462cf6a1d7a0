"""Cardinality estimators: the pluggable contract and a from-scratch MLP.

The estimator maps (point, eps) -> predicted neighbor count. The built-in
model is a fully connected network (ReLU hidden layers, identity output)
trained with minibatch SGD + momentum on squared error. Inputs are the
point coordinates with eps appended as an extra feature, standardized with
statistics computed from the training set only. Targets default to a
log1p transform (inverted with expm1 at predict time) since counts span
orders of magnitude.

Prediction cost is independent of the indexed set size; the oracle
estimator below deliberately violates that and exists only to validate
filter and join logic with perfect predictions.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from .data import Dataset, Metric
from .errors import DataError, NumericError
from .groundtruth import pairwise_distances
from .sampling import PreparedTrainingSet

TRANSFORMS = ("log1p", "raw")
DEFAULT_HIDDEN = (512, 512, 256, 128)


class CardinalityEstimator(Protocol):
    """Anything that predicts neighbor counts for (point, eps) queries."""

    def predict(self, point, eps: float) -> float: ...

    def predict_many(self, points, eps: float) -> np.ndarray: ...


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 512
    learning_rate: float = 1e-3
    momentum: float = 0.9
    seed: int = 0
    target_transform: str = "log1p"
    hidden: tuple = DEFAULT_HIDDEN

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise DataError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise DataError("learning rate must be > 0")
        if self.target_transform not in TRANSFORMS:
            raise DataError(f"unknown target transform {self.target_transform!r}")


@dataclass
class TrainingReport:
    epoch_loss: list
    final_mae: float
    final_mse: float
    wall_time: float


@dataclass
class MLPModel:
    """Trained network: weights/biases per layer plus input scaling stats."""

    weights: list            # list of (fan_in, fan_out) float32 arrays
    biases: list             # list of (fan_out,) float32 arrays
    feat_mean: np.ndarray    # (d+1,)
    feat_std: np.ndarray     # (d+1,)
    target_transform: str

    @property
    def dim(self) -> int:
        return int(self.weights[0].shape[0]) - 1

    def predict_many(self, points, eps: float) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if points.shape[1] != self.dim:
            raise DataError(f"dimension mismatch: model d={self.dim}, query d={points.shape[1]}")
        X = np.column_stack([points, np.full(points.shape[0], eps)])
        X = (X - self.feat_mean) / self.feat_std
        y = forward(self.weights, self.biases, X.astype(self.weights[0].dtype))
        y = y.astype(np.float64)
        if self.target_transform == "log1p":
            y = np.expm1(y)
        return np.maximum(y, 0.0)

    def predict(self, point, eps: float) -> float:
        return float(self.predict_many(np.asarray(point)[None, :], eps)[0])


def forward(weights, biases, X):
    """Plain forward pass: ReLU on hidden layers, identity output."""
    a = X
    last = len(weights) - 1
    for i, (W, b) in enumerate(zip(weights, biases)):
        a = a @ W + b
        if i != last:
            a = np.maximum(a, 0.0)
    return a[:, 0]


def loss_and_grads(weights, biases, X, y):
    """Mean squared error and its gradients w.r.t. every parameter."""
    acts = [X]
    last = len(weights) - 1
    a = X
    pre = []
    for i, (W, b) in enumerate(zip(weights, biases)):
        z = a @ W + b
        pre.append(z)
        a = np.maximum(z, 0.0) if i != last else z
        acts.append(a)
    pred = acts[-1][:, 0]
    err = pred - y
    n = X.shape[0]
    loss = float(np.mean(err * err))
    delta = (2.0 / n) * err[:, None]
    gw, gb = [None] * len(weights), [None] * len(weights)
    for i in range(last, -1, -1):
        gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ weights[i].T) * (pre[i - 1] > 0.0)
    return loss, gw, gb


def init_params(d_in: int, hidden, rng: np.random.Generator, dtype=np.float32):
    """He-style initialization from the seeded stream; zero biases."""
    widths = [d_in, *hidden, 1]
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        W = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        weights.append(W.astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return weights, biases


def fit(train: PreparedTrainingSet, R: Dataset, config: TrainConfig | None = None):
    """Train an MLP on the prepared tuples. Deterministic under config.seed.

    Returns (MLPModel, TrainingReport). Raises NumericError with the epoch
    number if the loss goes non-finite.
    """
    config = config or TrainConfig()
    if len(train) == 0:
        raise DataError("empty training set")
    t0 = time.perf_counter()
    X = np.column_stack([R.vectors[train.point_index], train.eps])
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[std < 1e-8] = 1.0
    Xs = ((X - mean) / std).astype(np.float32)
    y_raw = train.target
    y = np.log1p(y_raw) if config.target_transform == "log1p" else y_raw
    y = y.astype(np.float32)

    rng = np.random.default_rng(config.seed)
    weights, biases = init_params(X.shape[1], config.hidden, rng)
    vel_w = [np.zeros_like(W) for W in weights]
    vel_b = [np.zeros_like(b) for b in biases]
    lr, mom = config.learning_rate, config.momentum
    n = Xs.shape[0]
    epoch_loss = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, config.batch_size):
            sel = order[lo:lo + config.batch_size]
            # divergence is detected per epoch; let inf/nan flow until then
            with np.errstate(all="ignore"):
                loss, gw, gb = loss_and_grads(weights, biases, Xs[sel], y[sel])
            total += loss * sel.size
            for i in range(len(weights)):
                vel_w[i] = mom * vel_w[i] - lr * gw[i]
                vel_b[i] = mom * vel_b[i] - lr * gb[i]
                weights[i] += vel_w[i]
                biases[i] += vel_b[i]
        mean_loss = total / n
        if not np.isfinite(mean_loss):
            raise NumericError(f"training diverged at epoch {epoch}")
        epoch_loss.append(mean_loss)

    model = MLPModel([W.astype(np.float32) for W in weights],
                     [b.astype(np.float32) for b in biases],
                     mean, std, config.target_transform)
    # final quality on the training tuples, in raw count units
    pred = _predict_tuples(model, train, R)
    err = pred - y_raw
    report = TrainingReport(epoch_loss, float(np.mean(np.abs(err))),
                            float(np.mean(err * err)), time.perf_counter() - t0)
    return model, report


def _predict_tuples(model: MLPModel, tuples: PreparedTrainingSet, R: Dataset) -> np.ndarray:
    X = np.column_stack([R.vectors[tuples.point_index], tuples.eps])
    Xs = ((X - model.feat_mean) / model.feat_std).astype(model.weights[0].dtype)
    y = forward(model.weights, model.biases, Xs).astype(np.float64)
    if model.target_transform == "log1p":
        y = np.expm1(y)
    return np.maximum(y, 0.0)


def evaluate(model, test: PreparedTrainingSet, R: Dataset):
    """(MAE, MSE) of the model on tuples with exact targets, raw count units."""
    if len(test) == 0:
        raise DataError("empty test set")
    if isinstance(model, MLPModel):
        pred = _predict_tuples(model, test, R)
    else:
        pred = np.array([model.predict(R.vectors[p], e)
                         for p, e in zip(test.point_index, test.eps)])
    err = pred - test.target
    return float(np.mean(np.abs(err))), float(np.mean(err * err))


# ---------------------------------------------------------------------------
# model file: magic, version, d, transform, layer widths, scaling stats,
# then parameters as little-endian float32
# ---------------------------------------------------------------------------

_MAGIC = b"MLPC"
_VERSION = 1


def save_model(model: MLPModel, path) -> None:
    widths = [model.weights[0].shape[0]] + [W.shape[1] for W in model.weights]
    with Path(path).open("wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<III", _VERSION, model.dim,
                            TRANSFORMS.index(model.target_transform)))
        f.write(struct.pack("<I", len(widths)))
        f.write(struct.pack(f"<{len(widths)}I", *widths))
        f.write(np.asarray(model.feat_mean, dtype="<f8").tobytes())
        f.write(np.asarray(model.feat_std, dtype="<f8").tobytes())
        for W, b in zip(model.weights, model.biases):
            f.write(W.astype("<f4").tobytes())
            f.write(b.astype("<f4").tobytes())


def load_model(path) -> MLPModel:
    raw = Path(path).read_bytes()
    if len(raw) < 20 or raw[:4] != _MAGIC:
        raise DataError(f"{path}: not a model file")
    version, d, tr = struct.unpack_from("<III", raw, 4)
    if version != _VERSION:
        raise DataError(f"{path}: unsupported model version {version}")
    (nw,) = struct.unpack_from("<I", raw, 16)
    off = 20
    try:
        widths = struct.unpack_from(f"<{nw}I", raw, off)
        off += 4 * nw
        if widths[0] != d + 1 or widths[-1] != 1:
            raise DataError(f"{path}: layer widths inconsistent with dimension")
        n_feat = d + 1
        mean = np.frombuffer(raw, dtype="<f8", count=n_feat, offset=off).copy()
        off += 8 * n_feat
        std = np.frombuffer(raw, dtype="<f8", count=n_feat, offset=off).copy()
        off += 8 * n_feat
        weights, biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            count = fan_in * fan_out
            if off + 4 * (count + fan_out) > len(raw):
                raise DataError(f"{path}: truncated model file")
            W = np.frombuffer(raw, dtype="<f4", count=count, offset=off)
            off += 4 * count
            b = np.frombuffer(raw, dtype="<f4", count=fan_out, offset=off)
            off += 4 * fan_out
            weights.append(W.reshape(fan_in, fan_out).copy())
            biases.append(b.copy())
    except struct.error:
        raise DataError(f"{path}: truncated model file")
    if off != len(raw):
        raise DataError(f"{path}: trailing bytes in model file")
    return MLPModel(weights, biases, mean, std, TRANSFORMS[tr])


# ---------------------------------------------------------------------------
# test double: perfect predictions via brute force
# ---------------------------------------------------------------------------

class OracleEstimator:
    """predict(q, eps) = exact neighbor count in R. Test-only: per-query cost
    grows with |R|, unlike the trained estimator."""

    constant_time = False

    def __init__(self, R: Dataset, metric: Metric | None = None):
        self.R = R
        self.metric = metric or R.metric

    def predict(self, point, eps: float) -> float:
        return float(self.predict_many(np.asarray(point)[None, :], eps)[0])

    def predict_many(self, points, eps: float) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if points.shape[1] != self.R.dim:
            raise DataError(f"dimension mismatch: {points.shape[1]} vs {self.R.dim}")
        out = np.empty(points.shape[0])
        for lo in range(0, points.shape[0], 512):
            D = pairwise_distances(points[lo:lo + 512], self.R.vectors, self.metric)
            out[lo:lo + 512] = np.count_nonzero(D <= eps, axis=1)
        return out
