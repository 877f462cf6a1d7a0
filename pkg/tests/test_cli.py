import json

import numpy as np
import pytest

from simjoin.cli import main


def run(args, outdir):
    return main(["--output-dir", str(outdir), *args])


def test_pipeline_smoke(tmp_path):
    assert run(["synth", "--n", "300", "--d", "8", "--k", "2", "--out", "data.fvecs"],
               tmp_path) == 0
    assert (tmp_path / "data.fvecs").exists()
    assert run(["groundtruth", "--dataset", str(tmp_path / "data.fvecs"),
                "--eps-grid", "0.2:1.2:20", "--out", "table.bin",
                "--csv", "table.csv"], tmp_path) == 0
    assert (tmp_path / "table.bin").exists()
    assert (tmp_path / "table.csv").exists()
    assert run(["prepare", "--dataset", str(tmp_path / "data.fvecs"),
                "--table", str(tmp_path / "table.bin"),
                "--out", "prep.csv"], tmp_path) == 0
    assert run(["train", "--dataset", str(tmp_path / "data.fvecs"),
                "--prepared", str(tmp_path / "prep.csv"),
                "--epochs", "3", "--out", "model.bin"], tmp_path) == 0
    assert run(["build-filter", "--dataset", str(tmp_path / "data.fvecs"),
                "--model", str(tmp_path / "model.bin"),
                "--prepared", str(tmp_path / "prep.csv"),
                "--eps", "0.6", "--tau", "30", "--out", "filter.json"],
               tmp_path) == 0
    doc = json.loads((tmp_path / "filter.json").read_text())
    assert "decision_threshold" in doc["filter"]


def test_join_deterministic(tmp_path):
    run(["synth", "--n", "200", "--d", "8", "--k", "2", "--out", "r.fvecs"], tmp_path)
    run(["--seed", "5", "synth", "--n", "80", "--d", "8", "--k", "2",
         "--out", "s.fvecs"], tmp_path)
    for name in ("a.csv", "b.csv"):
        assert run(["join", "--r", str(tmp_path / "r.fvecs"),
                    "--s", str(tmp_path / "s.fvecs"),
                    "--engine", "naive", "--eps", "0.45", "--out", name],
                   tmp_path) == 0
    assert (tmp_path / "a.csv").read_text() == (tmp_path / "b.csv").read_text()
    assert (tmp_path / "a.json").exists()


def test_missing_model_is_data_error(tmp_path):
    run(["synth", "--n", "50", "--d", "4", "--out", "r.fvecs"], tmp_path)
    code = run(["join", "--r", str(tmp_path / "r.fvecs"),
                "--s", str(tmp_path / "r.fvecs"), "--engine", "learned",
                "--eps", "0.5", "--model", str(tmp_path / "nope.bin"),
                "--prepared", str(tmp_path / "nope.csv"), "--out", "x.csv"],
               tmp_path)
    assert code == 2


def test_usage_error_exit_code(tmp_path, capsys):
    assert run(["join", "--engine", "bogus"], tmp_path) == 1


def test_unknown_flag_rejected(tmp_path):
    assert run(["synth", "--n", "10", "--d", "4", "--out", "x.fvecs",
                "--frobnicate"], tmp_path) == 1


def test_bench_subcommand(tmp_path):
    cfg = {
        "dataset": {"synthetic": {"n": 200, "d": 8, "k": 2, "spread": 0.25,
                                  "seed": 1}},
        "eps": [0.5],
        "engines": [{"name": "naive"}, {"name": "learned-oracle", "tau": 0}],
    }
    (tmp_path / "exp.json").write_text(json.dumps(cfg))
    assert run(["bench", "--config", str(tmp_path / "exp.json")], tmp_path) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    rows = {r["engine"]: r for r in report["end2end"]}
    assert rows["learned-oracle"]["recall"] == 1.0


def test_sweep_subcommand(tmp_path):
    cfg = {
        "dataset": {"synthetic": {"n": 200, "d": 8, "k": 2, "spread": 0.25,
                                  "seed": 1}},
        "eps": 0.5,
        "engine": "lsh",
        "knob": "n_p",
        "values": [1, 4],
        "params": {"k": 4, "l": 3, "W": 0.5},
    }
    (tmp_path / "sweep.json").write_text(json.dumps(cfg))
    assert run(["sweep", "--config", str(tmp_path / "sweep.json")], tmp_path) == 0
    assert (tmp_path / "tradeoff.csv").exists()


def test_generalize_subcommand(tmp_path):
    cfg = {
        "dataset": {"synthetic": {"n": 300, "d": 8, "k": 2, "spread": 0.25,
                                  "seed": 1}},
        "fresh_dataset": {"synthetic": {"n": 300, "d": 8, "k": 2, "spread": 0.25,
                                        "seed": 2}},
        "eps": 0.6,
        "tau": 20,
        "grid": {"c_min": 0.2, "c_max": 1.2, "m": 15},
        "train": {"epochs": 5, "hidden": [16, 8]},
    }
    (tmp_path / "gen.json").write_text(json.dumps(cfg))
    assert run(["generalize", "--config", str(tmp_path / "gen.json")], tmp_path) == 0
    assert (tmp_path / "generalization.csv").exists()


def test_help_lists_defaults(capsys):
    code = main(["--help"])
    out = capsys.readouterr().out
    assert code == 0


def test_config_override(tmp_path):
    (tmp_path / "ov.json").write_text(json.dumps({"n": 25}))
    assert main(["--output-dir", str(tmp_path), "--config",
                 str(tmp_path / "ov.json"), "synth", "--n", "10", "--d", "4",
                 "--out", "o.fvecs"]) == 0
    from simjoin.data import load_dataset
    assert load_dataset(tmp_path / "o.fvecs", "fvecs").size == 25
