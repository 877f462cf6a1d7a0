"""Exact brute-force range search and cardinality grids.

This is the groundtruth source for training targets, negative-query
identification and recall evaluation. Thresholds are closed: a point at
exactly distance eps counts as a neighbor. When a probe point is a member
of the searched set it counts itself.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset, Metric, distances_to
from .errors import DataError


@dataclass(frozen=True)
class NeighborSet:
    """Indices of all points within distance eps of a query, strictly increasing."""

    eps: float
    ids: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64)
        object.__setattr__(self, "ids", ids)

    def __len__(self):
        return int(self.ids.size)


def range_search(R: Dataset, q, eps: float, metric: Metric | None = None) -> NeighborSet:
    """All indices i with d(q, R[i]) <= eps (closed threshold)."""
    if eps < 0:
        raise DataError(f"eps must be >= 0, got {eps}")
    d = distances_to(R.vectors, q, metric or R.metric)
    return NeighborSet(eps, np.flatnonzero(d <= eps))


def range_count(R: Dataset, q, eps: float, metric: Metric | None = None) -> int:
    """|range_search(R, q, eps)| without materializing the index list."""
    if eps < 0:
        raise DataError(f"eps must be >= 0, got {eps}")
    d = distances_to(R.vectors, q, metric or R.metric)
    return int(np.count_nonzero(d <= eps))


@dataclass
class CardinalityTable:
    """Per probe point, groundtruth neighbor counts over an ascending eps grid.

    Rows are monotonically non-decreasing across the grid by construction.
    """

    point_indices: np.ndarray  # (n,) indices into the probed dataset
    eps_grid: np.ndarray       # (m,) ascending
    counts: np.ndarray         # (n, m) uint32

    def __post_init__(self):
        self.point_indices = np.asarray(self.point_indices, dtype=np.int64)
        self.eps_grid = np.asarray(self.eps_grid, dtype=np.float64)
        self.counts = np.asarray(self.counts, dtype=np.uint32)
        if self.eps_grid.ndim != 1 or self.eps_grid.size < 2:
            raise DataError("eps grid must be 1-d with m >= 2")
        if np.any(np.diff(self.eps_grid) <= 0):
            raise DataError("eps grid must be strictly ascending")
        n, m = self.counts.shape
        if self.point_indices.shape != (n,) or self.eps_grid.shape != (m,):
            raise DataError("table shape mismatch")
        if np.any(np.diff(self.counts.astype(np.int64), axis=1) < 0):
            raise DataError("cardinality rows must be non-decreasing")

    @property
    def n(self) -> int:
        return self.counts.shape[0]

    @property
    def m(self) -> int:
        return self.counts.shape[1]


def pairwise_distances(A: np.ndarray, B: np.ndarray, metric: Metric) -> np.ndarray:
    """(len(A), len(B)) distance matrix, same semantics as `distance`."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape[1] != B.shape[1]:
        raise DataError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    if Metric(metric) is Metric.EUCLIDEAN:
        sq = (np.einsum("ij,ij->i", A, A)[:, None]
              - 2.0 * (A @ B.T)
              + np.einsum("ij,ij->i", B, B)[None, :])
        return np.sqrt(np.maximum(sq, 0.0))
    na = np.linalg.norm(A, axis=1)
    nb = np.linalg.norm(B, axis=1)
    if np.any(na == 0.0) or np.any(nb == 0.0):
        raise DataError("cosine distance undefined for zero vector")
    return 1.0 - (A @ B.T) / np.outer(na, nb)


def cardinality_grid(R: Dataset, probe_points: Dataset, eps_grid,
                     point_indices=None, chunk: int = 512) -> CardinalityTable:
    """counts[i][j] = range_count(R, probe_points[i], eps_grid[j]).

    One distance per (probe, R-point) pair; each probe row is sorted once
    and counted against the whole grid via searchsorted.
    """
    eps_grid = np.asarray(eps_grid, dtype=np.float64)
    if eps_grid.size < 2 or np.any(np.diff(eps_grid) <= 0):
        raise DataError("eps grid must be strictly ascending with m >= 2")
    n = probe_points.size
    counts = np.empty((n, eps_grid.size), dtype=np.uint32)
    metric = R.metric
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        D = pairwise_distances(probe_points.vectors[lo:hi], R.vectors, metric)
        D.sort(axis=1)
        for i in range(hi - lo):
            counts[lo + i] = np.searchsorted(D[i], eps_grid, side="right")
    if point_indices is None:
        point_indices = np.arange(n, dtype=np.int64)
    return CardinalityTable(point_indices, eps_grid, counts)


# ---------------------------------------------------------------------------
# serialization: binary (header n, m; grid as float64; counts as uint32) + CSV
# ---------------------------------------------------------------------------

_MAGIC = b"CGT1"


def save_table(table: CardinalityTable, path) -> None:
    with Path(path).open("wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<QQ", table.n, table.m))
        f.write(table.point_indices.astype("<i8").tobytes())
        f.write(table.eps_grid.astype("<f8").tobytes())
        f.write(table.counts.astype("<u4").tobytes())


def load_table(path) -> CardinalityTable:
    raw = Path(path).read_bytes()
    if len(raw) < 20 or raw[:4] != _MAGIC:
        raise DataError(f"{path}: not a cardinality table file")
    n, m = struct.unpack_from("<QQ", raw, 4)
    off = 20
    need = off + 8 * n + 8 * m + 4 * n * m
    if len(raw) != need:
        raise DataError(f"{path}: truncated table file")
    idx = np.frombuffer(raw, dtype="<i8", count=n, offset=off)
    off += 8 * n
    grid = np.frombuffer(raw, dtype="<f8", count=m, offset=off)
    off += 8 * m
    counts = np.frombuffer(raw, dtype="<u4", count=n * m, offset=off).reshape(n, m)
    return CardinalityTable(idx.copy(), grid.copy(), counts.copy())


def table_to_csv(table: CardinalityTable, path) -> None:
    header = "point_index," + ",".join(repr(float(e)) for e in table.eps_grid)
    body = np.column_stack([table.point_indices, table.counts.astype(np.int64)])
    np.savetxt(path, body, fmt="%d", delimiter=",", header=header, comments="")
