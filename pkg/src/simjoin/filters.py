"""Membership-style filters over metric data.

Two families:

* LearnedCountFilter: a cardinality estimator plus a decision threshold.
  A query is predicted positive iff the predicted neighbor count exceeds
  the threshold. The threshold is picked offline from the groundtruth
  negative training points (those with at most tau true neighbors), either
  as the mean of their predictions or as the order statistic that bounds
  the training false positive rate by t_fpr.

* LSBFilter: a bit-array filter keyed by p-stable LSH signatures; the
  data-unaware baseline.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, Metric
from .errors import DataError
from .groundtruth import CardinalityTable, pairwise_distances
from .sampling import PreparedTrainingSet, approx_targets_for_eps

log = logging.getLogger(__name__)

NEGATIVE_SOURCES = ("exact", "interpolated")
THRESHOLD_METHODS = ("mean", "fpr")


def identify_negatives(targets, tau: float) -> np.ndarray:
    """Indices whose target is <= tau (boundary included)."""
    return np.flatnonzero(np.asarray(targets, dtype=np.float64) <= tau)


def decision_threshold_mean(predictions) -> float:
    """Mean predicted count over the groundtruth-negative points."""
    predictions = np.asarray(predictions, dtype=np.float64)
    if predictions.size == 0:
        raise DataError("no negative training samples; reconsider tau or eps")
    return float(predictions.mean())


def decision_threshold_fpr(predictions, t_fpr: float) -> float:
    """The ceil((1-t_fpr)*n)-th smallest negative prediction.

    Queries are classified positive on strict '>', so by construction the
    fraction of negatives predicted positive is <= t_fpr. This is the
    minimal threshold meeting the tolerance, which maximizes recall.
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    if predictions.size == 0:
        raise DataError("no negative training samples; reconsider tau or eps")
    if not 0.0 < t_fpr < 1.0:
        raise DataError(f"t_fpr must be in (0,1), got {t_fpr}")
    n = predictions.size
    k = int(np.ceil((1.0 - t_fpr) * n))
    return float(np.sort(predictions)[k - 1])


@dataclass(frozen=True)
class ThresholdSelection:
    """How to pick the decision threshold and where the negative targets come from."""

    method: str = "fpr"               # "mean" | "fpr"
    t_fpr: float = 0.05               # used by the fpr method only
    negatives_source: str = "interpolated"  # "exact" | "interpolated"

    def __post_init__(self):
        if self.method not in THRESHOLD_METHODS:
            raise DataError(f"unknown threshold method {self.method!r}")
        if self.negatives_source not in NEGATIVE_SOURCES:
            raise DataError(f"unknown negatives source {self.negatives_source!r}")
        if self.method == "fpr" and not 0.0 < self.t_fpr < 1.0:
            raise DataError(f"t_fpr must be in (0,1), got {self.t_fpr}")


@dataclass
class LearnedCountFilter:
    """Estimator + decision threshold + neighbor threshold tau.

    Positive iff estimator.predict(q, eps) > decision_threshold. The
    threshold may be negative, in which case a clamped-at-zero estimator
    passes everything. Queries outside eps_domain clamp with a warning.
    """

    estimator: object
    decision_threshold: float
    tau: float
    eps_domain: tuple = (0.0, float("inf"))

    def _clamp(self, eps: float) -> float:
        lo, hi = self.eps_domain
        if eps < lo or eps > hi:
            log.warning("query eps %.6g outside trained domain [%.6g, %.6g]; clamping",
                        eps, lo, hi)
            return min(max(eps, lo), hi)
        return eps

    def query(self, q, eps: float) -> bool:
        eps = self._clamp(eps)
        return bool(self.estimator.predict(q, eps) > self.decision_threshold)

    def query_many(self, points, eps: float) -> np.ndarray:
        eps = self._clamp(eps)
        return self.estimator.predict_many(points, eps) > self.decision_threshold

    def descriptor(self) -> dict:
        return {"decision_threshold": self.decision_threshold, "tau": self.tau,
                "eps_domain": list(self.eps_domain)}


@dataclass
class FilterBuildInfo:
    eps: float
    method: str
    negatives_source: str
    tau: float
    n_negatives: int
    target_time: float      # seconds spent acquiring negative targets
    threshold_time: float   # seconds spent predicting + selecting the threshold

    def to_json(self) -> dict:
        return dict(self.__dict__)


def build_filter(estimator, R: Dataset, training_targets, eps: float,
                 selection: ThresholdSelection | None = None, tau: float = 0,
                 metric: Metric | None = None,
                 counts_include_self: bool = True):
    """Pick the decision threshold for `estimator` at radius `eps`.

    `training_targets` supplies the per-training-point groundtruth counts:
    a PreparedTrainingSet for the interpolated source, or for the exact
    source either a PreparedTrainingSet / CardinalityTable (its point list
    is probed by brute force at eps) or None (probe all of R).

    Training points probed against their own set count themselves, so when
    `counts_include_self` a point is a groundtruth negative iff its target
    is <= tau + 1. Returns (LearnedCountFilter, FilterBuildInfo).
    """
    selection = selection or ThresholdSelection()
    metric = metric or R.metric

    t0 = time.perf_counter()
    if selection.negatives_source == "interpolated":
        if not isinstance(training_targets, PreparedTrainingSet):
            raise DataError("interpolated negatives need a PreparedTrainingSet")
        point_ids, targets = approx_targets_for_eps(training_targets, eps)
    else:
        if isinstance(training_targets, PreparedTrainingSet):
            point_ids = np.unique(training_targets.point_index)
        elif isinstance(training_targets, CardinalityTable):
            point_ids = training_targets.point_indices
        elif training_targets is None:
            point_ids = np.arange(R.size)
        else:
            raise DataError("exact negatives need a prepared set, table or None")
        targets = np.empty(point_ids.size)
        for lo in range(0, point_ids.size, 512):
            sel = point_ids[lo:lo + 512]
            D = pairwise_distances(R.vectors[sel], R.vectors, metric)
            targets[lo:lo + 512] = np.count_nonzero(D <= eps, axis=1)
    target_time = time.perf_counter() - t0

    cutoff = tau + 1 if counts_include_self else tau
    neg = identify_negatives(targets, cutoff)
    t1 = time.perf_counter()
    if neg.size == 0:
        raise DataError(f"no groundtruth negatives at eps={eps}, tau={tau}; "
                        "raise tau or lower eps")
    preds = estimator.predict_many(R.vectors[point_ids[neg]], eps)
    if selection.method == "mean":
        threshold = decision_threshold_mean(preds)
    else:
        threshold = decision_threshold_fpr(preds, selection.t_fpr)
    threshold_time = time.perf_counter() - t1

    eps_domain = _training_eps_domain(training_targets)
    filt = LearnedCountFilter(estimator, threshold, tau, eps_domain)
    info = FilterBuildInfo(eps, selection.method, selection.negatives_source,
                           tau, int(neg.size), target_time, threshold_time)
    return filt, info


def _training_eps_domain(training_targets) -> tuple:
    if isinstance(training_targets, PreparedTrainingSet):
        return (float(training_targets.eps.min()), float(training_targets.eps.max()))
    if isinstance(training_targets, CardinalityTable):
        return (float(training_targets.eps_grid[0]), float(training_targets.eps_grid[-1]))
    return (0.0, float("inf"))


def save_filter_descriptor(filt: LearnedCountFilter, info: FilterBuildInfo, path) -> None:
    doc = {"filter": filt.descriptor(), "build": info.to_json()}
    Path(path).write_text(json.dumps(doc, indent=2))


# ---------------------------------------------------------------------------
# LSBF baseline
# ---------------------------------------------------------------------------

class LSBFilter:
    """Bit-array filter over p-stable LSH signatures.

    Each of the l groups concatenates k hashes h_j = floor((a_j.v + b_j)/W)
    into one composite signature, mixes it into a single bit index with the
    group's own random linear hash, and sets that bit: l bits per inserted
    point, AND within a group, OR across groups at query time. Exact
    duplicates of inserted points always query positive.
    """

    def __init__(self, dim: int, k: int, l: int, W: float, m_bits: int, seed: int):
        if m_bits < 1:
            raise DataError(f"m_bits must be >= 1, got {m_bits}")
        if k < 1 or l < 1 or W <= 0:
            raise DataError("need k >= 1, l >= 1, W > 0")
        self.dim, self.k, self.l, self.W, self.m_bits, self.seed = dim, k, l, W, m_bits, seed
        rng = np.random.default_rng(seed)
        self.proj = rng.normal(size=(l * k, dim))
        self.offsets = rng.uniform(0.0, W, size=l * k)
        # per-group mixing hash: random odd multipliers over the k-tuple
        self.mixers = rng.integers(1, 2**62, size=(l, k), dtype=np.int64) | 1
        self.group_salt = rng.integers(0, 2**62, size=l, dtype=np.int64)
        self.bits = np.zeros(m_bits, dtype=bool)

    def _bit_indices(self, points: np.ndarray) -> np.ndarray:
        """(n, l) bit index per point per group."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if points.shape[1] != self.dim:
            raise DataError(f"dimension mismatch: {points.shape[1]} vs {self.dim}")
        H = np.floor((points @ self.proj.T + self.offsets) / self.W).astype(np.int64)
        H = H.reshape(points.shape[0], self.l, self.k)
        with np.errstate(over="ignore"):
            mixed = (H * self.mixers).sum(axis=2) + self.group_salt
        return np.abs(mixed) % self.m_bits

    def insert_many(self, points) -> None:
        self.bits[self._bit_indices(points).ravel()] = True

    def query(self, q) -> bool:
        return bool(self.query_many(np.asarray(q)[None, :])[0])

    def query_many(self, points, eps: float | None = None) -> np.ndarray:
        """Positive iff any of the point's l group bits is set. `eps` is
        accepted for interface parity with the learned filter and ignored."""
        idx = self._bit_indices(points)
        return self.bits[idx].any(axis=1)

    @property
    def population(self) -> int:
        return int(np.count_nonzero(self.bits))


def lsbf_build(R: Dataset, k: int, l: int, W: float, m_bits: int, seed: int) -> LSBFilter:
    f = LSBFilter(R.dim, k, l, W, m_bits, seed)
    f.insert_many(R.vectors)
    return f
