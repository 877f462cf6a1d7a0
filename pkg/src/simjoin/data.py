"""Dataset ingestion, normalization, distance metrics, synthetic data and splits.

All randomness flows from explicit integer seeds through numpy's PCG64
(``np.random.default_rng``), so splits and synthetic datasets are
bit-reproducible across runs.
"""

from __future__ import annotations

import csv as _csv
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import DataError


class Metric(str, Enum):
    COSINE = "cosine"
    EUCLIDEAN = "euclidean"


@dataclass(frozen=True)
class Dataset:
    """An ordered collection of fixed-dimension real vectors plus a metric tag.

    Immutable after construction: the underlying array is marked read-only,
    so datasets are safe to share across threads.
    """

    vectors: np.ndarray
    metric: Metric = Metric.EUCLIDEAN
    name: str = ""

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 2:
            raise DataError(f"dataset array must be 2-d, got shape {v.shape}")
        if v.shape[0] < 1 or v.shape[1] < 1:
            raise DataError(f"dataset must have size >= 1 and d >= 1, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            bad = int(np.flatnonzero(~np.isfinite(v).all(axis=1))[0])
            raise DataError(f"non-finite component in vector {bad}")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "vectors", v)
        object.__setattr__(self, "metric", Metric(self.metric))

    @property
    def size(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def subset(self, indices, name: str = "") -> "Dataset":
        return Dataset(self.vectors[np.asarray(indices, dtype=np.int64)],
                       self.metric, name or self.name)


@dataclass(frozen=True)
class SplitSpec:
    """Reproducible train/test split: same seed + fraction => identical split."""

    train_fraction: float
    seed: int

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise DataError(f"train_fraction must be in (0,1), got {self.train_fraction}")


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------
# fvecs: per record a 4-byte little-endian int d, then d little-endian float32.
# csv:   one vector per line, comma-separated decimal floats, no header.
# raw_f32: header of two 8-byte little-endian unsigned ints (n, d), then n*d float32.

FORMATS = ("fvecs", "csv", "raw_f32")


def load_dataset(path, fmt: str, metric: Metric = Metric.EUCLIDEAN, name: str = "") -> Dataset:
    """Load a dataset file; dimension is inferred from the first record and enforced."""
    path = Path(path)
    if fmt not in FORMATS:
        raise DataError(f"unknown format {fmt!r}, expected one of {FORMATS}")
    if not path.exists():
        raise DataError(f"no such file: {path}")
    raw = path.read_bytes()
    if fmt == "fvecs":
        vecs = _parse_fvecs(raw, path)
    elif fmt == "csv":
        vecs = _parse_csv(path)
    else:
        vecs = _parse_raw_f32(raw, path)
    return Dataset(vecs, metric, name or path.stem)


def save_dataset(ds: Dataset, path, fmt: str) -> None:
    path = Path(path)
    if fmt == "fvecs":
        d = ds.dim
        with path.open("wb") as f:
            head = struct.pack("<i", d)
            for row in ds.vectors:
                f.write(head)
                f.write(row.astype("<f4").tobytes())
    elif fmt == "csv":
        with path.open("w", newline="") as f:
            w = _csv.writer(f)
            for row in ds.vectors:
                w.writerow([repr(float(x)) for x in row])
    elif fmt == "raw_f32":
        with path.open("wb") as f:
            f.write(struct.pack("<QQ", ds.size, ds.dim))
            f.write(ds.vectors.astype("<f4").tobytes())
    else:
        raise DataError(f"unknown format {fmt!r}, expected one of {FORMATS}")


def _parse_fvecs(raw: bytes, path) -> np.ndarray:
    if len(raw) == 0:
        raise DataError(f"{path}: empty file")
    rows = []
    off, rec, d0 = 0, 0, None
    while off < len(raw):
        if off + 4 > len(raw):
            raise DataError(f"{path}: truncated header at record {rec}")
        (d,) = struct.unpack_from("<i", raw, off)
        if d <= 0:
            raise DataError(f"{path}: bad dimension {d} at record {rec}")
        if d0 is None:
            d0 = d
        elif d != d0:
            raise DataError(f"{path}: dimension mismatch at record {rec}: {d} != {d0}")
        off += 4
        if off + 4 * d > len(raw):
            raise DataError(f"{path}: truncated vector at record {rec}")
        rows.append(np.frombuffer(raw, dtype="<f4", count=d, offset=off))
        off += 4 * d
        rec += 1
    return np.vstack(rows).astype(np.float64)


def _parse_csv(path) -> np.ndarray:
    rows = []
    d0 = None
    with Path(path).open(newline="") as f:
        for rec, line in enumerate(_csv.reader(f)):
            if not line:
                continue
            try:
                row = [float(x) for x in line]
            except ValueError:
                raise DataError(f"{path}: malformed record at row {rec} "
                                "(non-numeric field; headers are not accepted)")
            if d0 is None:
                d0 = len(row)
            elif len(row) != d0:
                raise DataError(f"{path}: dimension mismatch at row {rec}: "
                                f"{len(row)} != {d0}")
            rows.append(row)
    if not rows:
        raise DataError(f"{path}: empty file")
    return np.asarray(rows, dtype=np.float64)


def _parse_raw_f32(raw: bytes, path) -> np.ndarray:
    if len(raw) < 16:
        raise DataError(f"{path}: truncated raw_f32 header")
    n, d = struct.unpack_from("<QQ", raw, 0)
    if n < 1 or d < 1:
        raise DataError(f"{path}: bad raw_f32 header n={n} d={d}")
    need = 16 + 4 * n * d
    if len(raw) != need:
        raise DataError(f"{path}: raw_f32 size mismatch, expected {need} bytes got {len(raw)}")
    return np.frombuffer(raw, dtype="<f4", count=n * d, offset=16).reshape(n, d).astype(np.float64)


# ---------------------------------------------------------------------------
# distances
# ---------------------------------------------------------------------------

def distance(a, b, metric: Metric) -> float:
    """Distance between two vectors: L2 for Euclidean, 1 - cos similarity for cosine."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(distances_to(a[None, :], b, metric)[0])


def distances_to(rows: np.ndarray, q: np.ndarray, metric: Metric) -> np.ndarray:
    """Distances from every row of `rows` to the single vector `q` (vectorized)."""
    rows = np.asarray(rows, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if rows.shape[1] != q.shape[0]:
        raise DataError(f"dimension mismatch: {rows.shape[1]} vs {q.shape[0]}")
    if Metric(metric) is Metric.EUCLIDEAN:
        diff = rows - q
        return np.sqrt(np.einsum("ij,ij->i", diff, diff))
    norms = np.linalg.norm(rows, axis=1) * np.linalg.norm(q)
    if np.any(norms == 0.0):
        raise DataError("cosine distance undefined for zero vector")
    return 1.0 - (rows @ q) / norms


def normalize_unit(ds: Dataset) -> Dataset:
    """Scale every vector to unit L2 norm, preserving order. Errors on zero vectors."""
    norms = np.linalg.norm(ds.vectors, axis=1, keepdims=True)
    zero = np.flatnonzero(norms[:, 0] == 0.0)
    if zero.size:
        raise DataError(f"zero-norm vector at index {int(zero[0])}")
    return Dataset(ds.vectors / norms, ds.metric, ds.name)


def is_unit_normalized(ds: Dataset, tol: float = 1e-6) -> bool:
    return bool(np.all(np.abs(np.linalg.norm(ds.vectors, axis=1) - 1.0) <= tol))


def convert_epsilon(eps_cos: float) -> float:
    """Convert a cosine-distance threshold to the equivalent Euclidean one.

    Valid only for unit-normalized vectors, where ||a-b||^2 = 2 - 2*cos(a,b),
    so a cosine radius e maps to a Euclidean radius sqrt(2*e).
    """
    if not 0.0 <= eps_cos <= 2.0:
        raise DataError(f"cosine epsilon must be in [0,2], got {eps_cos}")
    return float(np.sqrt(2.0 * eps_cos))


# ---------------------------------------------------------------------------
# splits and synthetics
# ---------------------------------------------------------------------------

def split_train_test(ds: Dataset, spec: SplitSpec):
    """Disjoint, exhaustive partition with |train| = floor(train_fraction * size)."""
    if ds.size < 2:
        raise DataError("need at least 2 vectors to split")
    rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(ds.size)
    n_train = int(np.floor(spec.train_fraction * ds.size))
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    return (ds.subset(train_idx, ds.name + "-train"),
            ds.subset(test_idx, ds.name + "-test"))


def synth_gaussian_mixture(n: int, d: int, k: int, spread: float, seed: int,
                           centers: np.ndarray | None = None,
                           name: str = "synthetic") -> Dataset:
    """n unit vectors from k isotropic Gaussian clusters with unit-vector centers.

    Cluster centers default to random unit vectors; pass `centers` (k x d)
    to pin them. Deterministic under seed.
    """
    if n < 1 or d < 1 or k < 1:
        raise DataError(f"n, d, k must all be >= 1, got {(n, d, k)}")
    rng = np.random.default_rng(seed)
    if centers is None:
        centers = rng.normal(size=(k, d))
        centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    else:
        centers = np.asarray(centers, dtype=np.float64)
        if centers.shape != (k, d):
            raise DataError(f"centers must be {(k, d)}, got {centers.shape}")
    labels = rng.integers(0, k, size=n)
    pts = centers[labels] + spread * rng.normal(size=(n, d))
    norms = np.linalg.norm(pts, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return Dataset(pts / norms, Metric.EUCLIDEAN, name)


def concat(a: Dataset, b: Dataset, name: str = "") -> Dataset:
    """Stack two datasets with the same dimension and metric."""
    if a.dim != b.dim:
        raise DataError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if a.metric != b.metric:
        raise DataError(f"metric mismatch: {a.metric} vs {b.metric}")
    return Dataset(np.vstack([a.vectors, b.vectors]), a.metric, name or a.name)
