"""Metrics, experiment orchestration, trade-off sweeps and generalization runs.

Reports are versioned JSON; tables are plain CSV with a fixed column order
(end2end.csv, confusion.csv, tradeoff.csv, generalization.csv) suitable for
external plotting. Timing excludes dataset loading and model training;
filter build cost is reported in a separate column because threshold
selection happens offline.
"""

from __future__ import annotations

import csv as _csv
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data as vd
from .data import Dataset, Metric, split_train_test, synth_gaussian_mixture, SplitSpec
from .errors import DataError
from .filters import (LearnedCountFilter, ThresholdSelection, build_filter,
                      lsbf_build)
from .groundtruth import cardinality_grid, pairwise_distances
from .join import (BruteForceSearcher, JoinResult, LSHSearcher, filtered_join,
                   lsh_build, naive_join)
from .regressor import OracleEstimator, TrainConfig, fit
from .sampling import build_epsilon_grid, prepare_training_set

REPORT_VERSION = 1


@dataclass
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def filter_confusion(flags, true_counts, tau: float):
    """Confusion of predicted-positive flags against groundtruth counts.

    Groundtruth positive iff true count > tau. Returns (counts, fpr, fnr);
    a rate with an empty denominator is None, not zero.
    """
    flags = np.asarray(flags, dtype=bool)
    true_counts = np.asarray(true_counts, dtype=np.float64)
    if flags.shape != true_counts.shape:
        raise DataError("flags and counts must have equal length")
    pos = true_counts > tau
    tp = int(np.count_nonzero(flags & pos))
    fp = int(np.count_nonzero(flags & ~pos))
    fn = int(np.count_nonzero(~flags & pos))
    tn = int(np.count_nonzero(~flags & ~pos))
    fpr = fp / (fp + tn) if (fp + tn) > 0 else None
    fnr = fn / (fn + tp) if (fn + tp) > 0 else None
    return ConfusionCounts(tp, fp, tn, fn), fpr, fnr


def recall(found_pairs, groundtruth_pairs) -> float:
    """|found ∩ groundtruth| / |groundtruth|; 1.0 when there is nothing to find."""
    gt = _as_pair_set(groundtruth_pairs)
    if not gt:
        return 1.0
    found = _as_pair_set(found_pairs)
    return len(found & gt) / len(gt)


def _as_pair_set(pairs) -> set:
    if isinstance(pairs, set):
        return pairs
    if isinstance(pairs, JoinResult):
        return pairs.pair_set()
    return {(int(r), int(s)) for r, s in np.asarray(pairs).reshape(-1, 2)}


def true_neighbor_counts(R: Dataset, S: Dataset, eps: float,
                         metric: Metric | None = None) -> np.ndarray:
    metric = metric or R.metric
    out = np.empty(S.size, dtype=np.int64)
    for lo in range(0, S.size, 512):
        D = pairwise_distances(S.vectors[lo:lo + 512], R.vectors, metric)
        out[lo:lo + 512] = np.count_nonzero(D <= eps, axis=1)
    return out


def negative_query_portion(R: Dataset, S: Dataset, eps: float, tau: float = 0,
                           metric: Metric | None = None) -> float:
    """Fraction of queries in S with at most tau true neighbors in R."""
    counts = true_neighbor_counts(R, S, eps, metric)
    return float(np.count_nonzero(counts <= tau)) / S.size


@dataclass
class JoinMetrics:
    """Per-(engine, eps) quality and bookkeeping. anpq = nbrs / ppq."""

    recall: float
    total_time: float
    filter_time: float
    search_time: float
    nbrs: int   # total neighbors returned over all queries
    ppq: int    # predicted-positive query count
    anpq: float | None

    @classmethod
    def from_result(cls, result: JoinResult, groundtruth) -> "JoinMetrics":
        nbrs = int(result.neighbor_counts.sum())
        ppq = int(np.count_nonzero(result.predicted_positive))
        return cls(recall(result, groundtruth), result.total_time,
                   result.filter_time, result.search_time,
                   nbrs, ppq, (nbrs / ppq) if ppq > 0 else None)

    def row(self) -> dict:
        return dict(self.__dict__)


# ---------------------------------------------------------------------------
# experiment orchestration
# ---------------------------------------------------------------------------

END2END_COLUMNS = ["engine", "eps", "recall", "total_time", "filter_time",
                   "search_time", "build_time", "nbrs", "ppq", "anpq"]
CONFUSION_COLUMNS = ["engine", "eps", "tau", "tp", "fp", "tn", "fn", "fpr", "fnr"]
TRADEOFF_COLUMNS = ["engine", "eps", "knob", "value", "total_time", "recall"]
GENERALIZATION_COLUMNS = ["split", "eps", "naive_time", "engine_time",
                          "speedup", "recall"]


def load_workload(cfg: dict):
    """(R, S) from an experiment config's dataset section."""
    dcfg = cfg["dataset"]
    metric = Metric(cfg.get("metric", "euclidean"))
    if "synthetic" in dcfg:
        p = dcfg["synthetic"]
        ds = synth_gaussian_mixture(p["n"], p["d"], p["k"], p["spread"], p["seed"])
    else:
        ds = vd.load_dataset(dcfg["path"], dcfg["format"], metric)
        if cfg.get("normalize", True):
            ds = vd.normalize_unit(ds)
    ds = Dataset(ds.vectors, metric, ds.name)
    split = cfg.get("split", {"train_fraction": 0.8, "seed": 0})
    return split_train_test(ds, SplitSpec(split["train_fraction"], split["seed"]))


def _validate_config(cfg: dict) -> None:
    for key in ("dataset", "eps", "engines"):
        if key not in cfg:
            raise DataError(f"experiment config missing {key!r}")
    if not cfg["eps"]:
        raise DataError("experiment config needs at least one eps")
    if "synthetic" not in cfg["dataset"] and "path" not in cfg["dataset"]:
        raise DataError("dataset section needs either synthetic params or a path")


def _train_estimator(R: Dataset, cfg: dict, seed: int):
    gcfg = cfg.get("grid", {})
    metric = Metric(cfg.get("metric", "euclidean"))
    defaults = (0.4, 0.9) if metric is Metric.COSINE else (0.5, 2.0)
    grid = build_epsilon_grid(gcfg.get("c_min", defaults[0]),
                              gcfg.get("c_max", defaults[1]),
                              gcfg.get("m", 100))
    table = cardinality_grid(R, R, grid.values)
    prepared = prepare_training_set(R, table, cfg.get("strategy", "adaptive"),
                                    cfg.get("s", 6), seed)
    tcfg = cfg.get("train", {})
    config = TrainConfig(epochs=tcfg.get("epochs", 200),
                         batch_size=tcfg.get("batch_size", 512),
                         learning_rate=tcfg.get("learning_rate", 1e-3),
                         seed=seed,
                         hidden=tuple(tcfg.get("hidden", (512, 512, 256, 128))))
    model, _ = fit(prepared, R, config)
    return model, prepared


def _build_engine(name: str, params: dict, R: Dataset, eps: float, seed: int,
                  shared: dict):
    """Returns (filter_or_None, base_searcher, build_time)."""
    t0 = time.perf_counter()
    if name == "naive":
        return None, BruteForceSearcher(R), 0.0
    if name == "learned-oracle":
        # perfect estimator with the decision threshold pinned at tau:
        # positive iff true count > tau, so FPR = FNR = 0 by construction
        tau = params.get("tau", 0)
        filt = LearnedCountFilter(OracleEstimator(R), float(tau), tau)
        return filt, BruteForceSearcher(R), time.perf_counter() - t0
    if name == "learned":
        est = shared["model"]
        tau = params.get("tau", 50)
        sel = ThresholdSelection(params.get("method", "fpr"),
                                 params.get("t_fpr", 0.05),
                                 params.get("negatives_source", "interpolated"))
        filt, _ = build_filter(est, R, shared["prepared"], eps, sel, tau)
        return filt, BruteForceSearcher(R), time.perf_counter() - t0
    if name == "naive-lsbf":
        filt = lsbf_build(R, params.get("k", 18), params.get("l", 10),
                          params.get("W", 2.5),
                          params.get("m_bits", R.size * params.get("k", 18)), seed)
        return filt, BruteForceSearcher(R), time.perf_counter() - t0
    if name in ("lsh", "lsh-learned"):
        idx = shared.get("lsh_index")
        if idx is None or shared.get("lsh_params") != (params.get("k", 18),
                                                       params.get("l", 10),
                                                       params.get("W", 2.5)):
            idx = lsh_build(R, params.get("k", 18), params.get("l", 10),
                            params.get("W", 2.5), seed)
            shared["lsh_index"] = idx
            shared["lsh_params"] = (params.get("k", 18), params.get("l", 10),
                                    params.get("W", 2.5))
        base = LSHSearcher(idx, params.get("n_p", 2))
        if name == "lsh":
            return None, base, time.perf_counter() - t0
        sel = ThresholdSelection(params.get("method", "mean"),
                                 params.get("t_fpr", 0.05),
                                 params.get("negatives_source", "interpolated"))
        filt, _ = build_filter(shared["model"], R, shared["prepared"], eps, sel,
                               params.get("tau", 0))
        return filt, base, time.perf_counter() - t0
    raise DataError(f"unknown engine {name!r}")


def _run_engine(filt, base, R, S, eps) -> JoinResult:
    if filt is None:
        if isinstance(base, BruteForceSearcher):
            return naive_join(R, S, eps, base.metric)
        return filtered_join(lambda q, e: True, base, R, S, eps)
    return filtered_join(filt, base, R, S, eps)


def run_experiment(cfg: dict, outdir) -> dict:
    """Run every configured engine at every eps against the naive groundtruth.

    Writes report.json, end2end.csv and confusion.csv under outdir and
    returns the report. Deterministic modulo wall-clock timings.
    """
    _validate_config(cfg)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    seed = cfg.get("seed", 0)
    R, S = load_workload(cfg)
    tau = cfg.get("tau", 0)

    shared = {}
    engine_names = [e["name"] for e in cfg["engines"]]
    if any(n in ("learned", "lsh-learned") for n in engine_names):
        shared["model"], shared["prepared"] = _train_estimator(R, cfg, seed)

    end2end, confusion = [], []
    for eps in cfg["eps"]:
        gt = naive_join(R, S, eps)
        counts = true_neighbor_counts(R, S, eps)
        for engine in cfg["engines"]:
            name, params = engine["name"], {k: v for k, v in engine.items() if k != "name"}
            try:
                filt, base, build_time = _build_engine(name, params, R, eps, seed, shared)
                result = gt if name == "naive" else _run_engine(filt, base, R, S, eps)
            except Exception as exc:
                raise type(exc)(f"engine {name!r} at eps={eps}: {exc}") from exc
            metrics = JoinMetrics.from_result(result, gt)
            end2end.append({"engine": name, "eps": eps, "build_time": build_time,
                            **metrics.row()})
            if filt is not None:
                cc, fpr, fnr = filter_confusion(result.predicted_positive, counts,
                                                params.get("tau", tau))
                confusion.append({"engine": name, "eps": eps,
                                  "tau": params.get("tau", tau),
                                  "tp": cc.tp, "fp": cc.fp, "tn": cc.tn, "fn": cc.fn,
                                  "fpr": fpr, "fnr": fnr})

    report = {"version": REPORT_VERSION, "config": cfg,
              "sizes": {"R": R.size, "S": S.size, "d": R.dim},
              "end2end": end2end, "confusion": confusion}
    (outdir / "report.json").write_text(json.dumps(report, indent=2))
    _write_csv(outdir / "end2end.csv", END2END_COLUMNS, end2end)
    _write_csv(outdir / "confusion.csv", CONFUSION_COLUMNS, confusion)
    return report


def load_report(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != REPORT_VERSION:
        raise DataError(f"{path}: unsupported report version {doc.get('version')}")
    return doc


def _write_csv(path, columns, rows) -> None:
    with Path(path).open("w", newline="") as f:
        w = _csv.DictWriter(f, fieldnames=columns, extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow(row)


# ---------------------------------------------------------------------------
# trade-off sweeps
# ---------------------------------------------------------------------------

def tradeoff_sweep(R: Dataset, S: Dataset, eps: float, engine: str, knob: str,
                   values, outpath=None, seed: int = 0, shared: dict | None = None,
                   base_params: dict | None = None):
    """One (time, recall) point per knob value; optionally CSV-emitted.

    Supported sweeps: the learned engine's tau or selection method, the LSH
    engine's probe count n_p, the LSBF's W or m_bits.
    """
    if len(values) == 0:
        raise DataError("knob grid must be non-empty")
    shared = shared or {}
    base_params = base_params or {}
    gt = naive_join(R, S, eps)
    rows = []
    for value in values:
        params = dict(base_params)
        params[knob] = value
        filt, base, _ = _build_engine(engine, params, R, eps, seed, shared)
        result = _run_engine(filt, base, R, S, eps)
        rows.append({"engine": engine, "eps": eps, "knob": knob, "value": value,
                     "total_time": result.total_time,
                     "recall": recall(result, gt)})
    if outpath is not None:
        _write_csv(outpath, TRADEOFF_COLUMNS, rows)
    return rows


# ---------------------------------------------------------------------------
# generalization: train once, evaluate on the original and a fresh workload
# ---------------------------------------------------------------------------

def generalization_check(model, prepared, R1: Dataset, S1: Dataset,
                         R2: Dataset, S2: Dataset, eps: float, tau: float = 0,
                         method: str = "fpr", t_fpr: float = 0.05,
                         outpath=None) -> dict:
    """Reuse one trained model on two workloads; report paired speedup/recall.

    R2/S2 must come from the same generator as R1/S1 (fresh seed); the caller
    guards distributional match. The same estimator and prepared tuples are
    used to rebuild the threshold against each R.
    """
    if R1.dim != R2.dim:
        raise DataError("workloads are out-of-distribution: dimension mismatch")
    rows = []
    out = {}
    for label, R, S in (("first", R1, S1), ("second", R2, S2)):
        gt = naive_join(R, S, eps)
        sel = ThresholdSelection(method, t_fpr, "interpolated")
        filt, _ = build_filter(model, R1, prepared, eps, sel, tau)
        result = filtered_join(filt, BruteForceSearcher(R), R, S, eps)
        speedup = gt.total_time / result.total_time if result.total_time > 0 else float("inf")
        rec = recall(result, gt)
        rows.append({"split": label, "eps": eps, "naive_time": gt.total_time,
                     "engine_time": result.total_time, "speedup": speedup,
                     "recall": rec})
        out[label] = {"speedup": speedup, "recall": rec}
    out["recall_delta"] = abs(out["first"]["recall"] - out["second"]["recall"])
    out["speedup_rel_diff"] = (abs(out["first"]["speedup"] - out["second"]["speedup"])
                               / out["first"]["speedup"])
    if outpath is not None:
        _write_csv(outpath, GENERALIZATION_COLUMNS, rows)
    return out
