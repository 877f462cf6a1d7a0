"""Training-condition selection and interpolation-based target approximation.

Given a per-point cardinality row over a candidate eps grid, two strategies
pick the s (eps, target) pairs that become training tuples:

* uniform: fixed, evenly spaced grid indices (no randomness);
* adaptive: bin pairs by target density and sample proportionally to bin
  occupancy, topping up at random from the unselected pairs.

The adaptive strategy is density-aware: points whose count curve spends most
of the grid in a few target ranges get most of their samples from exactly
those ranges.
"""

from __future__ import annotations

import csv as _csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset
from .errors import DataError
from .groundtruth import CardinalityTable

STRATEGIES = ("uniform", "adaptive")


@dataclass(frozen=True)
class EpsilonGrid:
    """Uniform, inclusive grid of m candidate eps values over [c_min, c_max]."""

    c_min: float
    c_max: float
    m: int
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))


def build_epsilon_grid(c_min: float, c_max: float, m: int) -> EpsilonGrid:
    if not c_min < c_max:
        raise DataError(f"need c_min < c_max, got [{c_min}, {c_max}]")
    if m < 2:
        raise DataError(f"need m >= 2, got {m}")
    return EpsilonGrid(c_min, c_max, m, np.linspace(c_min, c_max, m))


def uniform_indices(m: int, s: int) -> np.ndarray:
    """Fixed evenly spaced pick: index 0, then ceil(m*j/(s-1)) - 1 for j = 1..s-1.

    For m=100, s=6 this is {0, 19, 39, 59, 79, 99}; s=m selects everything.
    """
    if s > m:
        raise DataError(f"cannot select {s} of {m} conditions")
    if s < 1:
        raise DataError(f"s must be >= 1, got {s}")
    if s == 1:
        return np.array([0], dtype=np.int64)
    rest = np.ceil(m * np.arange(1, s) / (s - 1)).astype(np.int64) - 1
    return np.concatenate([[0], rest])


def select_uniform(eps_values, targets, s: int):
    """s (eps, target) pairs at the fixed evenly spaced indices. Pure function."""
    eps_values = np.asarray(eps_values, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    idx = uniform_indices(eps_values.size, s)
    return eps_values[idx], targets[idx]


def adaptive_allocation(targets, s: int):
    """Stage-one bin allocation of the adaptive strategy.

    Splits [t_min, t_max] into s equal-width bins (right-open, last bin
    closed), assigns each target to a bin, and allots floor(s*|B_i|/m)
    samples to bin i. Returns (bin_ids, quotas); sum(quotas) <= s always.
    """
    targets = np.asarray(targets, dtype=np.float64)
    m = targets.size
    t_min, t_max = float(targets.min()), float(targets.max())
    if t_min == t_max:
        raise DataError("degenerate row: all targets equal")
    scaled = (targets - t_min) / (t_max - t_min) * s
    bin_ids = np.minimum(scaled.astype(np.int64), s - 1)
    sizes = np.bincount(bin_ids, minlength=s)
    quotas = (s * sizes) // m
    return bin_ids, quotas


def select_adaptive(eps_values, targets, s: int, rng: np.random.Generator):
    """Density-aware selection of s distinct (eps, target) pairs for one point.

    Bins by target, draws each bin's quota without replacement, then tops up
    to s with uniform draws from the still-unselected pairs. A degenerate row
    (all targets equal) falls back to s uniform random distinct eps picks.
    Deterministic given the rng state.
    """
    eps_values = np.asarray(eps_values, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    m = eps_values.size
    if s > m:
        raise DataError(f"cannot select {s} of {m} conditions")
    if targets.min() == targets.max():
        chosen = rng.choice(m, size=s, replace=False)
    else:
        bin_ids, quotas = adaptive_allocation(targets, s)
        picked = []
        for b in range(s):
            if quotas[b] > 0:
                members = np.flatnonzero(bin_ids == b)
                picked.append(rng.choice(members, size=int(quotas[b]), replace=False))
        chosen = np.concatenate(picked) if picked else np.empty(0, dtype=np.int64)
        if chosen.size < s:
            mask = np.ones(m, dtype=bool)
            mask[chosen] = False
            pool = np.flatnonzero(mask)
            extra = rng.choice(pool, size=s - chosen.size, replace=False)
            chosen = np.concatenate([chosen, extra])
    chosen = np.sort(chosen)
    return eps_values[chosen], targets[chosen]


@dataclass
class PreparedTrainingSet:
    """Flat (point_index, eps, target) tuples, s per point, grouped by point."""

    point_index: np.ndarray  # (s*n,) int64
    eps: np.ndarray          # (s*n,) float64
    target: np.ndarray       # (s*n,) float64; integer-valued when exact
    strategy: str
    s: int
    seed: int

    def __post_init__(self):
        self.point_index = np.asarray(self.point_index, dtype=np.int64)
        self.eps = np.asarray(self.eps, dtype=np.float64)
        self.target = np.asarray(self.target, dtype=np.float64)
        if not (self.point_index.shape == self.eps.shape == self.target.shape):
            raise DataError("prepared set arrays must have equal length")

    def __len__(self):
        return int(self.point_index.size)


def prepare_training_set(R: Dataset, table: CardinalityTable, strategy: str,
                         s: int, seed: int) -> PreparedTrainingSet:
    """s tuples per table row via the chosen strategy; deterministic under seed.

    Each point draws from its own rng stream derived from (seed, point_index),
    so per-point selection is order-independent.
    """
    if strategy not in STRATEGIES:
        raise DataError(f"unknown strategy {strategy!r}, expected one of {STRATEGIES}")
    if np.any(table.point_indices >= R.size) or np.any(table.point_indices < 0):
        raise DataError("table points fall outside the dataset")
    grid = table.eps_grid
    n = table.n
    pts = np.repeat(table.point_indices, s)
    eps_out = np.empty(n * s)
    t_out = np.empty(n * s)
    for i in range(n):
        row = table.counts[i].astype(np.float64)
        if strategy == "uniform":
            e, t = select_uniform(grid, row, s)
        else:
            rng = np.random.default_rng([seed, int(table.point_indices[i])])
            e, t = select_adaptive(grid, row, s, rng)
        eps_out[i * s:(i + 1) * s] = e
        t_out[i * s:(i + 1) * s] = t
    return PreparedTrainingSet(pts, eps_out, t_out, strategy, s, seed)


def stage_one_topup_fraction(table: CardinalityTable, s: int) -> float:
    """Fraction of tuples the adaptive strategy would fill by random top-up."""
    total = 0
    for i in range(table.n):
        row = table.counts[i].astype(np.float64)
        if row.min() == row.max():
            total += s
        else:
            _, quotas = adaptive_allocation(row, s)
            total += s - int(quotas.sum())
    return total / (s * table.n)


# ---------------------------------------------------------------------------
# interpolation-based target approximation
# ---------------------------------------------------------------------------

def interpolate_target(eps_lo, t_lo, eps_hi, t_hi, eps_query) -> float:
    """Linear interpolation of a cardinality between two bracketing eps values.

    eps_query is clamped into [eps_lo, eps_hi]; the result always lies between
    the endpoint targets (never extrapolates).
    """
    if not eps_lo < eps_hi:
        raise DataError(f"need eps_lo < eps_hi, got {eps_lo} >= {eps_hi}")
    e = min(max(eps_query, eps_lo), eps_hi)
    return float(t_lo + (t_hi - t_lo) / (eps_hi - eps_lo) * (e - eps_lo))


def group_by_point(prepared: PreparedTrainingSet):
    """(point_ids, E, T): per-point eps/target rows sorted by eps.

    Requires the same tuple count per point (true for prepared sets).
    """
    order = np.lexsort((prepared.eps, prepared.point_index))
    pts = prepared.point_index[order]
    ids, starts = np.unique(pts, return_index=True)
    per = np.diff(np.append(starts, pts.size))
    if np.any(per != per[0]):
        raise DataError("uneven tuple counts per point")
    s = int(per[0])
    if s < 2:
        raise DataError("need >= 2 training eps values per point to interpolate")
    E = prepared.eps[order].reshape(ids.size, s)
    T = prepared.target[order].reshape(ids.size, s)
    return ids, E, T


def approx_targets_for_eps(prepared: PreparedTrainingSet, eps_query: float):
    """Per-point approximate target at eps_query via linear interpolation.

    Brackets eps_query between each point's neighboring training eps values;
    out-of-range queries clamp to the nearest endpoint's target. Returns
    (point_ids, targets), vectorized over all points.
    """
    ids, E, T = group_by_point(prepared)
    n, s = E.shape
    # index of the upper bracket in each sorted row
    hi = np.sum(E < eps_query, axis=1)
    hi = np.clip(hi, 1, s - 1)
    lo = hi - 1
    r = np.arange(n)
    e_lo, e_hi = E[r, lo], E[r, hi]
    t_lo, t_hi = T[r, lo], T[r, hi]
    e = np.clip(eps_query, e_lo, e_hi)
    span = e_hi - e_lo
    if np.any(span <= 0):
        raise DataError("duplicate training eps values within a point")
    out = t_lo + (t_hi - t_lo) / span * (e - e_lo)
    return ids, out


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def save_prepared_csv(prepared: PreparedTrainingSet, path) -> None:
    with Path(path).open("w", newline="") as f:
        w = _csv.writer(f)
        w.writerow(["point_index", "eps", "target"])
        w.writerow(["#meta", prepared.strategy, f"{prepared.s},{prepared.seed}"])
        for p, e, t in zip(prepared.point_index, prepared.eps, prepared.target):
            w.writerow([int(p), repr(float(e)), repr(float(t))])


def load_prepared_csv(path) -> PreparedTrainingSet:
    with Path(path).open(newline="") as f:
        rows = list(_csv.reader(f))
    if len(rows) < 3 or rows[0] != ["point_index", "eps", "target"] or rows[1][0] != "#meta":
        raise DataError(f"{path}: not a prepared-training-set CSV")
    strategy = rows[1][1]
    s, seed = (int(x) for x in rows[1][2].split(","))
    body = rows[2:]
    pts = np.array([int(r[0]) for r in body], dtype=np.int64)
    eps = np.array([float(r[1]) for r in body])
    tgt = np.array([float(r[2]) for r in body])
    return PreparedTrainingSet(pts, eps, tgt, strategy, s, seed)
