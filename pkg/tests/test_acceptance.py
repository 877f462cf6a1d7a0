"""End-to-end acceptance suite.

Each test exercises one numbered acceptance criterion and prints a single
pass/fail line. Heavy artifacts (trained models, groundtruth tables) are
built once in session fixtures and shared across criteria.
"""

import time
from contextlib import contextmanager

import numpy as np
import pytest

from simjoin.bench import (filter_confusion, negative_query_portion, recall,
                           run_experiment, tradeoff_sweep, true_neighbor_counts,
                           generalization_check)
from simjoin.data import Dataset, Metric, concat, distance, synth_gaussian_mixture
from simjoin.filters import (LearnedCountFilter, ThresholdSelection, build_filter,
                             decision_threshold_fpr, identify_negatives)
from simjoin.groundtruth import cardinality_grid, range_count
from simjoin.join import (BruteForceSearcher, filtered_join, learned_join,
                          naive_join)
from simjoin.regressor import (OracleEstimator, TrainConfig, evaluate, fit,
                               init_params, loss_and_grads)
from simjoin.sampling import (PreparedTrainingSet, adaptive_allocation,
                              approx_targets_for_eps, group_by_point,
                              prepare_training_set)


# one line per criterion; conftest echoes these in the terminal summary so
# the scoreboard is visible even without -s
VERDICTS = []


def _verdict(line):
    VERDICTS.append(line)
    print(line)


@contextmanager
def criterion(num, name):
    try:
        yield
    except BaseException:
        _verdict(f"[FAIL] criterion {num:02d}: {name}")
        raise
    _verdict(f"[PASS] criterion {num:02d}: {name}")


# ---------------------------------------------------------------------------
# shared workloads
# ---------------------------------------------------------------------------

D = 16
EPS_JOIN = 0.5
GRID_JOIN = np.linspace(0.2, 1.1, 100)


def _fixed_centers(k, d, seed=1234):
    rng = np.random.default_rng(seed)
    c = rng.normal(size=(k, d))
    return c / np.linalg.norm(c, axis=1, keepdims=True)


CENTERS = _fixed_centers(4, D)


def _make_workload(sample_seed):
    """(R, S) with dense clusters plus scattered singletons.

    The cluster centers are pinned so repeated calls draw fresh samples
    from the same distribution. Scattered points are near-uniform on the
    sphere and have no neighbors at the join radius, so a large fraction
    of queries is negative.
    """
    dense = synth_gaussian_mixture(6800, D, 4, 0.04, seed=sample_seed,
                                   centers=CENTERS)
    scatter = synth_gaussian_mixture(1392, D, 1, 50.0, seed=sample_seed + 1,
                                     centers=CENTERS[:1])
    R = concat(dense, scatter, "workload-R")
    s_dense = synth_gaussian_mixture(512, D, 4, 0.04, seed=sample_seed + 2,
                                     centers=CENTERS)
    s_scatter = synth_gaussian_mixture(1536, D, 1, 50.0, seed=sample_seed + 3,
                                       centers=CENTERS[:1])
    S = concat(s_dense, s_scatter, "workload-S")
    return R, S


@pytest.fixture(scope="session")
def trained_workload():
    """First workload plus an estimator trained on its R set."""
    R, S = _make_workload(100)
    table = cardinality_grid(R, R, GRID_JOIN)
    prepared = prepare_training_set(R, table, "adaptive", 6, seed=0)
    config = TrainConfig(epochs=30, batch_size=512, learning_rate=1e-3, seed=0)
    model, report = fit(prepared, R, config)
    print(f"workload model: MAE={report.final_mae:.2f} "
          f"wall={report.wall_time:.1f}s")
    return R, S, model, prepared


# ---------------------------------------------------------------------------
# 1. exact join equals the quadratic oracle
# ---------------------------------------------------------------------------

def test_criterion_01_oracle_equivalence():
    with criterion(1, "naive join equals quadratic pairwise oracle"):
        t0 = time.perf_counter()
        R = synth_gaussian_mixture(200, 12, 3, 0.3, seed=11)
        S = synth_gaussian_mixture(100, 12, 3, 0.3, seed=12)
        eps = 0.6
        result = naive_join(R, S, eps)
        expected = {(i, j) for i in range(R.size) for j in range(S.size)
                    if distance(R.vectors[i], S.vectors[j],
                                Metric.EUCLIDEAN) <= eps}
        assert result.pair_set() == expected
        assert time.perf_counter() - t0 < 5.0


# ---------------------------------------------------------------------------
# 2. perfect estimator, threshold = tau = 0 -> perfect filter
# ---------------------------------------------------------------------------

def test_criterion_02_perfect_filter_recall():
    with criterion(2, "oracle-count filter has recall 1.0 and FPR = FNR = 0"):
        for seed in (21, 22):
            R = synth_gaussian_mixture(400, 10, 3, 0.25, seed=seed)
            S = synth_gaussian_mixture(150, 10, 3, 0.25, seed=seed + 50)
            eps = 0.55
            filt = LearnedCountFilter(OracleEstimator(R), decision_threshold=0.0,
                                      tau=0)
            result = filtered_join(filt, BruteForceSearcher(R), R, S, eps)
            gt = naive_join(R, S, eps)
            assert recall(result, gt) == 1.0
            counts = true_neighbor_counts(R, S, eps)
            _, fpr, fnr = filter_confusion(result.predicted_positive, counts, 0)
            assert (fpr or 0.0) == 0.0 and (fnr or 0.0) == 0.0


# ---------------------------------------------------------------------------
# 3. adaptive training-condition selection structure
# ---------------------------------------------------------------------------

def test_criterion_03_adaptive_selection_structure():
    with criterion(3, "adaptive selection: s distinct eps/point, worked "
                      "allocation, seeded determinism"):
        R = synth_gaussian_mixture(1000, 12, 3, 0.2, seed=31)
        table = cardinality_grid(R, R, np.linspace(0.2, 1.2, 100))
        prep = prepare_training_set(R, table, "adaptive", 6, seed=3)
        assert len(prep) == 6000
        _, E, _ = group_by_point(prep)
        assert all(np.unique(row).size == 6 for row in E)

        # the 59/1/19/1/20 bin instance with s=5, m=100
        targets = np.concatenate([np.full(59, 0.0), [1.2], np.full(19, 2.4),
                                  [3.6], np.full(20, 4.8)])
        bin_ids, quotas = adaptive_allocation(targets, s=5)
        assert np.bincount(bin_ids, minlength=5).tolist() == [59, 1, 19, 1, 20]
        assert quotas.tolist() == [2, 0, 0, 0, 1]

        again = prepare_training_set(R, table, "adaptive", 6, seed=3)
        np.testing.assert_array_equal(prep.eps, again.eps)
        np.testing.assert_array_equal(prep.target, again.target)


# ---------------------------------------------------------------------------
# 4. interpolation is exact on piecewise-linear count curves
# ---------------------------------------------------------------------------

def _comb_dataset(step_counts):
    """Far-apart 1-d combs where a shared radius is a mid-step for each comb,
    making every count curve exactly linear between mid-step training radii."""
    eps_query = 1.0
    rows, probes, probe_counts = [], [], []
    for i, k_i in enumerate(step_counts):
        delta = eps_query / (k_i + 0.5)
        n_side = k_i + 6
        xs = np.arange(-n_side, n_side + 1) * delta
        ys = np.full(xs.size, 1000.0 * i)
        rows.append(np.column_stack([xs, ys]))
        probes.append(sum(r.shape[0] for r in rows) - n_side - 1)
        probe_counts.append(1 + 2 * k_i)
    R = Dataset(np.vstack(rows), Metric.EUCLIDEAN)
    return R, np.array(probes), np.array(probe_counts), eps_query


def test_criterion_04_interpolation_exactness():
    with criterion(4, "interpolated targets and thresholds match exact ones "
                      "within 1e-9 on piecewise-linear curves"):
        step_counts = [1, 2, 3, 5, 8, 13]
        R, probes, expected, eps_q = _comb_dataset(step_counts)
        pts, eps_list, t_list = [], [], []
        for p, k_i in zip(probes, step_counts):
            delta = eps_q / (k_i + 0.5)
            for dk in (-1, 0, 1, 2):
                radius = (k_i + dk + 0.5) * delta
                pts.append(p)
                eps_list.append(radius)
                t_list.append(float(range_count(R, R.vectors[p], radius)))
        prepared = PreparedTrainingSet(np.array(pts), np.array(eps_list),
                                       np.array(t_list), "uniform", 4, 0)

        # targets: interpolating at the probe radius reproduces exact counts
        ids, approx = approx_targets_for_eps(prepared, eps_q)
        exact = np.array([range_count(R, R.vectors[i], eps_q) for i in ids],
                         dtype=float)
        assert np.max(np.abs(approx - exact)) <= 1e-9

        # thresholds: interpolated and exact negative sources coincide
        est = OracleEstimator(R)
        for method in ("mean", "fpr"):
            for tau in (3, 6, 10):
                f_i, _ = build_filter(est, R, prepared, eps_q,
                                      ThresholdSelection(method, 0.05,
                                                         "interpolated"), tau)
                f_e, _ = build_filter(est, R, prepared, eps_q,
                                      ThresholdSelection(method, 0.05,
                                                         "exact"), tau)
                assert abs(f_i.decision_threshold
                           - f_e.decision_threshold) <= 1e-9


# ---------------------------------------------------------------------------
# 5. the quantile threshold caps training FPR by construction
# ---------------------------------------------------------------------------

def test_criterion_05_training_fpr_bound(trained_workload):
    with criterion(5, "training-set FPR at the quantile threshold <= 0.05"):
        R, S, model, prepared = trained_workload
        for tau in (0, 10, 50):
            filt, _ = build_filter(model, R, prepared, EPS_JOIN,
                                   ThresholdSelection("fpr", 0.05,
                                                      "interpolated"), tau)
            ids, targets = approx_targets_for_eps(prepared, EPS_JOIN)
            neg = identify_negatives(targets, tau + 1)
            preds = model.predict_many(R.vectors[ids[neg]], EPS_JOIN)
            train_fpr = np.count_nonzero(
                preds > filt.decision_threshold) / preds.size
            assert train_fpr <= 0.05
            # property holds for any prediction vector, not just this model's
            assert (np.count_nonzero(preds > decision_threshold_fpr(preds, 0.05))
                    / preds.size) <= 0.05


# ---------------------------------------------------------------------------
# 6. adaptive selection trains a better estimator than uniform selection
# ---------------------------------------------------------------------------

def test_criterion_06_adaptive_beats_uniform():
    with criterion(6, "adaptive-selection MAE <= 1.0x uniform-selection MAE "
                      "on a skewed workload"):
        t0 = time.perf_counter()
        d = 16
        centers = _fixed_centers(2, d, seed=60)
        dense = synth_gaussian_mixture(7000, d, 1, 0.04, seed=61,
                                       centers=centers[:1])
        loose = synth_gaussian_mixture(1000, d, 1, 0.3, seed=62,
                                       centers=centers[1:])
        R = concat(dense, loose, "skewed")
        grid = np.linspace(0.1, 1.2, 100)
        table = cardinality_grid(R, R, grid)

        config = TrainConfig(epochs=80, batch_size=512, learning_rate=2e-3,
                             seed=0)
        maes = {}
        for strategy in ("adaptive", "uniform"):
            prep = prepare_training_set(R, table, strategy, 6, seed=0)
            model, _ = fit(prep, R, config)
            # held-out tuples: fresh (point, eps) pairs with exact counts
            rng = np.random.default_rng(63)
            pts = rng.integers(0, R.size, size=2000)
            eps_held = rng.uniform(grid[0], grid[-1], size=2000)
            exact = np.array([range_count(R, R.vectors[p], e)
                              for p, e in zip(pts, eps_held)], dtype=float)
            held = PreparedTrainingSet(pts, eps_held, exact, strategy, 6, 63)
            maes[strategy], _ = evaluate(model, held, R)

        ratio = maes["adaptive"] / maes["uniform"]
        print(f"adaptive MAE={maes['adaptive']:.2f} "
              f"uniform MAE={maes['uniform']:.2f} ratio={ratio:.3f} "
              f"(target band <= 0.75)")
        assert ratio <= 1.0
        assert time.perf_counter() - t0 <= 300


# ---------------------------------------------------------------------------
# 7. end-to-end speedup with a trained estimator
# ---------------------------------------------------------------------------

def test_criterion_07_end_to_end_speedup(trained_workload):
    with criterion(7, "learned join >= 1.5x faster than naive with "
                      "recall >= 0.85 on a >= 50% negative workload"):
        R, S, model, prepared = trained_workload
        assert negative_query_portion(R, S, EPS_JOIN) >= 0.5
        gt = naive_join(R, S, EPS_JOIN)
        result, _, _ = learned_join(R, S, model, prepared, EPS_JOIN,
                                    tau=0, method="fpr")
        speedup = gt.total_time / result.total_time
        rec = recall(result, gt)
        print(f"speedup={speedup:.2f}x recall={rec:.4f} "
              f"negative portion={negative_query_portion(R, S, EPS_JOIN):.2f}")
        assert speedup >= 1.5
        assert rec >= 0.85


# ---------------------------------------------------------------------------
# 8. interpolated target acquisition is far cheaper than exact
# ---------------------------------------------------------------------------

def test_criterion_08_interpolated_target_speed():
    with criterion(8, "interpolated target acquisition >= 50x faster than "
                      "exact on 10k x 32-d data"):
        R = synth_gaussian_mixture(10_000, 32, 4, 0.15, seed=81)
        grid = np.linspace(0.3, 1.3, 30)
        table = cardinality_grid(R, R, grid)
        prepared = prepare_training_set(R, table, "adaptive", 6, seed=0)
        eps_q = 0.7

        t0 = time.perf_counter()
        exact = true_neighbor_counts(R, R, eps_q)
        exact_time = time.perf_counter() - t0

        t0 = time.perf_counter()
        ids, approx = approx_targets_for_eps(prepared, eps_q)
        interp_time = time.perf_counter() - t0

        assert ids.size == R.size and exact.size == R.size
        ratio = exact_time / interp_time
        print(f"exact={exact_time:.3f}s interpolated={interp_time * 1e3:.2f}ms "
              f"ratio={ratio:.0f}x")
        assert ratio >= 50


# ---------------------------------------------------------------------------
# 9. trade-off sweeps are monotone and emit valid CSVs
# ---------------------------------------------------------------------------

def test_criterion_09_tradeoff_monotonicity(tmp_path):
    with criterion(9, "LSH recall non-decreasing in probes, oracle-filter "
                      "recall non-increasing in tau, valid tradeoff.csv"):
        R = synth_gaussian_mixture(1000, 16, 3, 0.25, seed=91)
        S = synth_gaussian_mixture(400, 16, 3, 0.25, seed=92)
        eps = 0.55

        rows = tradeoff_sweep(R, S, eps, "lsh", "n_p", [1, 2, 4, 8],
                              tmp_path / "tradeoff.csv", seed=9,
                              base_params={"k": 8, "l": 4, "W": 0.4})
        lsh_recalls = [r["recall"] for r in rows]
        assert all(a <= b + 1e-12 for a, b in zip(lsh_recalls, lsh_recalls[1:]))
        lines = (tmp_path / "tradeoff.csv").read_text().strip().splitlines()
        assert len(lines) == 5 and "recall" in lines[0]

        rows = tradeoff_sweep(R, S, eps, "learned-oracle", "tau",
                              [0, 2, 5, 10, 20], tmp_path / "tau.csv", seed=9)
        tau_recalls = [r["recall"] for r in rows]
        assert all(a >= b - 1e-12 for a, b in zip(tau_recalls, tau_recalls[1:]))
        assert (tmp_path / "tau.csv").exists()


# ---------------------------------------------------------------------------
# 10. analytic gradients match finite differences
# ---------------------------------------------------------------------------

def test_criterion_10_gradient_check():
    with criterion(10, "analytic MLP gradients match central differences "
                       "within 1e-4"):
        rng = np.random.default_rng(101)
        weights, biases = init_params(4, (6, 5), rng, dtype=np.float64)
        X = rng.normal(size=(9, 4))
        y = rng.normal(size=9)
        _, gw, gb = loss_and_grads(weights, biases, X, y)
        h = 1e-6
        worst = 0.0
        for layer in range(len(weights)):
            for arr, grad in ((weights[layer], gw[layer]),
                              (biases[layer], gb[layer])):
                it = np.nditer(arr, flags=["multi_index"])
                for _ in it:
                    ix = it.multi_index
                    orig = arr[ix]
                    arr[ix] = orig + h
                    lp, _, _ = loss_and_grads(weights, biases, X, y)
                    arr[ix] = orig - h
                    lm, _, _ = loss_and_grads(weights, biases, X, y)
                    arr[ix] = orig
                    numeric = (lp - lm) / (2 * h)
                    denom = max(abs(numeric), abs(grad[ix]), 1e-8)
                    worst = max(worst, abs(numeric - grad[ix]) / denom)
        print(f"worst relative gradient error: {worst:.2e}")
        assert worst < 1e-4


# ---------------------------------------------------------------------------
# 11. a model trained once generalizes to a fresh same-generator workload
# ---------------------------------------------------------------------------

def test_criterion_11_generalization(trained_workload):
    with criterion(11, "fresh same-generator workload: |recall diff| <= 0.05 "
                       "and speedup within +-30%"):
        R1, S1, model, prepared = trained_workload
        R2, S2 = _make_workload(200)
        out = generalization_check(model, prepared, R1, S1, R2, S2,
                                   EPS_JOIN, tau=0, method="fpr")
        print(f"first: speedup={out['first']['speedup']:.2f}x "
              f"recall={out['first']['recall']:.4f}; "
              f"second: speedup={out['second']['speedup']:.2f}x "
              f"recall={out['second']['recall']:.4f}")
        assert out["recall_delta"] <= 0.05
        assert out["speedup_rel_diff"] <= 0.30


# ---------------------------------------------------------------------------
# 12. metric bookkeeping identities hold in every report
# ---------------------------------------------------------------------------

def test_criterion_12_metric_bookkeeping(tmp_path):
    with criterion(12, "anpq * ppq == nbrs in every report row; confusion "
                       "sums to |S|"):
        cfg = {
            "dataset": {"synthetic": {"n": 1500, "d": 16, "k": 3,
                                      "spread": 0.25, "seed": 121}},
            "split": {"train_fraction": 0.75, "seed": 1},
            "eps": [0.45, 0.6],
            "tau": 0,
            "seed": 12,
            "engines": [{"name": "naive"},
                        {"name": "learned-oracle", "tau": 0},
                        {"name": "naive-lsbf", "k": 6, "l": 4, "W": 0.5,
                         "m_bits": 100_000},
                        {"name": "lsh", "k": 6, "l": 4, "W": 0.5, "n_p": 2}],
        }
        report = run_experiment(cfg, tmp_path)
        assert len(report["end2end"]) == 8
        for row in report["end2end"]:
            if row["ppq"] > 0:
                # anpq is defined as nbrs / ppq; require the exact quotient
                assert row["anpq"] == row["nbrs"] / row["ppq"]
            else:
                assert row["nbrs"] == 0
        for row in report["confusion"]:
            assert (row["tp"] + row["fp"] + row["tn"] + row["fn"]
                    == report["sizes"]["S"])
