"""Similarity-join engines.

All engines verify candidates with exact distances, so emitted pairs always
satisfy d(r, s) <= eps; only recall can degrade, never precision. The exact
nested-loop join is the groundtruth for every recall computation.
"""

from __future__ import annotations

import csv as _csv
import itertools
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, Metric, distances_to
from .errors import DataError
from .filters import LearnedCountFilter, ThresholdSelection, build_filter
from .groundtruth import NeighborSet, range_search
from .sampling import PreparedTrainingSet


@dataclass
class JoinResult:
    """Cross-set pairs within eps plus per-query bookkeeping."""

    pairs: np.ndarray               # (n_pairs, 2) int64, (r_index, s_index), sorted
    predicted_positive: np.ndarray  # (|S|,) bool; all-True for unfiltered engines
    neighbor_counts: np.ndarray     # (|S|,) neighbors actually returned per query
    filter_time: float
    search_time: float
    total_time: float

    def pair_set(self) -> set:
        return {(int(r), int(s)) for r, s in self.pairs}

    @property
    def n_pairs(self) -> int:
        return int(self.pairs.shape[0])


def _assemble(per_query_ids, n_s) -> np.ndarray:
    rows = []
    for s_idx, ids in per_query_ids:
        if len(ids):
            rows.append(np.column_stack([ids, np.full(len(ids), s_idx, dtype=np.int64)]))
    if not rows:
        return np.empty((0, 2), dtype=np.int64)
    pairs = np.vstack(rows)
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    return pairs[order]


class BruteForceSearcher:
    """Exact range search over a fixed R."""

    def __init__(self, R: Dataset, metric: Metric | None = None):
        self.R = R
        self.metric = metric or R.metric

    def search(self, q, eps: float) -> NeighborSet:
        return range_search(self.R, q, eps, self.metric)


def naive_join(R: Dataset, S: Dataset, eps: float, metric: Metric | None = None) -> JoinResult:
    """Brute-force range search per query: the exact Def-by-construction join."""
    if R.dim != S.dim:
        raise DataError(f"dimension mismatch: {R.dim} vs {S.dim}")
    metric = metric or R.metric
    t0 = time.perf_counter()
    searcher = BruteForceSearcher(R, metric)
    found = []
    counts = np.zeros(S.size, dtype=np.int64)
    for i in range(S.size):
        ns = searcher.search(S.vectors[i], eps)
        counts[i] = len(ns)
        found.append((i, ns.ids))
    search_time = time.perf_counter() - t0
    pairs = _assemble(found, S.size)
    return JoinResult(pairs, np.ones(S.size, dtype=bool), counts,
                      0.0, search_time, time.perf_counter() - t0)


def filtered_join(filt, base, R: Dataset, S: Dataset, eps: float) -> JoinResult:
    """Search only the queries the filter predicts positive.

    `filt` is either an object with query_many(points, eps) -> bool array
    (evaluated in one batch) or a plain callable (q, eps) -> bool.
    """
    if R.dim != S.dim:
        raise DataError(f"dimension mismatch: {R.dim} vs {S.dim}")
    t0 = time.perf_counter()
    if hasattr(filt, "query_many"):
        flags = np.asarray(filt.query_many(S.vectors, eps), dtype=bool)
    else:
        flags = np.array([bool(filt(S.vectors[i], eps)) for i in range(S.size)])
    filter_time = time.perf_counter() - t0

    t1 = time.perf_counter()
    found = []
    counts = np.zeros(S.size, dtype=np.int64)
    for i in np.flatnonzero(flags):
        ns = base.search(S.vectors[i], eps)
        counts[i] = len(ns)
        found.append((i, ns.ids))
    search_time = time.perf_counter() - t1
    pairs = _assemble(found, S.size)
    return JoinResult(pairs, flags, counts, filter_time, search_time,
                      time.perf_counter() - t0)


def learned_join(R: Dataset, S: Dataset, estimator, prepared: PreparedTrainingSet,
                 eps: float, tau: float = 50, t_fpr: float = 0.05,
                 method: str = "fpr", negatives_source: str = "interpolated",
                 base=None):
    """Filter-then-search join with a learned count filter over R.

    Defaults (fpr selection at 5% tolerance, tau=50, interpolated negatives,
    brute-force base) give the aggressive speed-oriented configuration; pass
    method="mean", tau=0 for the quality-oriented one used with approximate
    bases. Returns (JoinResult, LearnedCountFilter, FilterBuildInfo).
    """
    selection = ThresholdSelection(method, t_fpr, negatives_source)
    filt, info = build_filter(estimator, R, prepared, eps, selection, tau)
    base = base or BruteForceSearcher(R)
    result = filtered_join(filt, base, R, S, eps)
    return result, filt, info


# ---------------------------------------------------------------------------
# p-stable multi-probe LSH
# ---------------------------------------------------------------------------

class LSHIndex:
    """l hash tables of composite p-stable keys; Euclidean only.

    Each table hashes a point with k functions h_j(v) = floor((a_j.v + b_j)/W)
    and stores it in the bucket keyed by the k-tuple. Every R index appears
    exactly once per table.
    """

    def __init__(self, R: Dataset, k: int, l: int, W: float, seed: int):
        if k < 1 or l < 1 or W <= 0:
            raise DataError("need k >= 1, l >= 1, W > 0")
        self.R, self.k, self.l, self.W, self.seed = R, k, l, W, seed
        rng = np.random.default_rng(seed)
        self.proj = rng.normal(size=(l * k, R.dim))
        self.offsets = rng.uniform(0.0, W, size=l * k)
        H = self._keys(R.vectors)  # (n, l, k)
        self.tables = []
        for t in range(l):
            buckets = {}
            keys = H[:, t, :]
            for i in range(R.size):
                buckets.setdefault(tuple(keys[i]), []).append(i)
            self.tables.append({key: np.asarray(v, dtype=np.int64)
                                for key, v in buckets.items()})

    def _keys(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if points.shape[1] != self.R.dim:
            raise DataError(f"dimension mismatch: {points.shape[1]} vs {self.R.dim}")
        H = np.floor((points @ self.proj.T + self.offsets) / self.W).astype(np.int64)
        return H.reshape(points.shape[0], self.l, self.k)


def probe_sequence(key, n_p: int):
    """First n_p probe keys: the key itself, then +-1 perturbations of its
    coordinates in increasing perturbation-count order (deterministic)."""
    key = tuple(key)
    k = len(key)
    out = [key]
    if n_p <= 1:
        return out
    for weight in range(1, k + 1):
        for positions in itertools.combinations(range(k), weight):
            for signs in itertools.product((-1, 1), repeat=weight):
                probe = list(key)
                for pos, sg in zip(positions, signs):
                    probe[pos] += sg
                out.append(tuple(probe))
                if len(out) == n_p:
                    return out
    return out


def lsh_range_search(idx: LSHIndex, q, eps: float, n_p: int,
                     metric: Metric = Metric.EUCLIDEAN) -> NeighborSet:
    """Probe up to n_p buckets per table, union candidates, verify exactly.

    The result is always a subset of the true neighbor set: candidates can
    be missed, never invented.
    """
    if n_p < 1:
        raise DataError(f"n_p must be >= 1, got {n_p}")
    keys = idx._keys(np.asarray(q)[None, :])[0]
    cand = set()
    for t in range(idx.l):
        table = idx.tables[t]
        for probe in probe_sequence(keys[t], n_p):
            hit = table.get(probe)
            if hit is not None:
                cand.update(hit.tolist())
    if not cand:
        return NeighborSet(eps, np.empty(0, dtype=np.int64))
    cand = np.fromiter(cand, dtype=np.int64)
    d = distances_to(idx.R.vectors[cand], np.asarray(q, dtype=np.float64), metric)
    return NeighborSet(eps, np.sort(cand[d <= eps]))


def lsh_build(R: Dataset, k: int, l: int, W: float, seed: int) -> LSHIndex:
    return LSHIndex(R, k, l, W, seed)


class LSHSearcher:
    """BaseSearcher adapter around a multi-probe LSH index."""

    def __init__(self, idx: LSHIndex, n_p: int, metric: Metric = Metric.EUCLIDEAN):
        self.idx, self.n_p, self.metric = idx, n_p, metric

    def search(self, q, eps: float) -> NeighborSet:
        return lsh_range_search(self.idx, q, eps, self.n_p, self.metric)


# ---------------------------------------------------------------------------
# serialization: pairs CSV plus a JSON sidecar of timings and flags
# ---------------------------------------------------------------------------

def save_join_result(result: JoinResult, csv_path, sidecar_path=None) -> None:
    with Path(csv_path).open("w", newline="") as f:
        w = _csv.writer(f)
        w.writerow(["r_index", "s_index"])
        for r, s in result.pairs:
            w.writerow([int(r), int(s)])
    if sidecar_path is not None:
        doc = {
            "n_pairs": result.n_pairs,
            "filter_time": result.filter_time,
            "search_time": result.search_time,
            "total_time": result.total_time,
            "predicted_positive": result.predicted_positive.astype(int).tolist(),
            "neighbor_counts": result.neighbor_counts.tolist(),
        }
        Path(sidecar_path).write_text(json.dumps(doc))
