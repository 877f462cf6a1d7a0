"""Command-line entry point: ingest -> groundtruth -> prepare -> train ->
build-filter -> join -> bench.

Every subcommand is resumable from its on-disk inputs; there is no hidden
state between invocations. Logs go to stderr, data goes to files. Exit
codes: 0 success, 1 usage, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench as bn
from . import data as vd
from . import filters as ft
from . import groundtruth as gt
from . import join as jn
from . import regressor as rg
from . import sampling as sp
from .errors import DataError, NumericError

log = logging.getLogger("simjoin")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


def _parse_grid(text: str):
    """'min:max:count' -> EpsilonGrid."""
    try:
        lo, hi, m = text.split(":")
        return sp.build_epsilon_grid(float(lo), float(hi), int(m))
    except ValueError:
        raise DataError(f"bad grid spec {text!r}, expected min:max:count")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="simjoin", description=__doc__,
                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--seed", type=int, default=0, help="global seed (default 0)")
    p.add_argument("--threads", type=int, default=1,
                   help="internal parallelism cap; default 1 (recorded, joins are sequential)")
    p.add_argument("--output-dir", default=".", help="directory for output artifacts")
    p.add_argument("--log-level", default="INFO",
                   choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    p.add_argument("--config", default=None,
                   help="JSON file whose keys override subcommand flags")
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("synth", parents=[], help="generate a synthetic dataset")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--d", type=int, required=True)
    s.add_argument("--k", type=int, default=1)
    s.add_argument("--spread", type=float, default=0.2)
    s.add_argument("--format", default="fvecs", choices=vd.FORMATS)
    s.add_argument("--out", required=True)

    s = sub.add_parser("ingest", help="load, validate and optionally normalize a dataset")
    s.add_argument("--input", required=True)
    s.add_argument("--format", required=True, choices=vd.FORMATS)
    s.add_argument("--normalize", action="store_true")
    s.add_argument("--out-format", default="fvecs", choices=vd.FORMATS)
    s.add_argument("--out", required=True)

    s = sub.add_parser("groundtruth", help="compute a cardinality table over an eps grid")
    s.add_argument("--dataset", required=True)
    s.add_argument("--format", default="fvecs", choices=vd.FORMATS)
    s.add_argument("--eps-grid", default="0.5:2.0:100",
                   help="min:max:count (defaults 0.5:2.0:100 Euclidean; use 0.4:0.9:100 for cosine)")
    s.add_argument("--metric", default="euclidean", choices=["euclidean", "cosine"])
    s.add_argument("--out", required=True)
    s.add_argument("--csv", default=None, help="also write an inspection CSV")

    s = sub.add_parser("prepare", help="select training tuples from a cardinality table")
    s.add_argument("--table", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--format", default="fvecs", choices=vd.FORMATS)
    s.add_argument("--strategy", default="adaptive", choices=sp.STRATEGIES)
    s.add_argument("--s", type=int, default=6, help="tuples per point (default 6)")
    s.add_argument("--out", required=True)

    s = sub.add_parser("train", help="train the MLP cardinality estimator")
    s.add_argument("--dataset", required=True)
    s.add_argument("--format", default="fvecs", choices=vd.FORMATS)
    s.add_argument("--prepared", required=True)
    s.add_argument("--epochs", type=int, default=200)
    s.add_argument("--batch-size", type=int, default=512)
    s.add_argument("--learning-rate", type=float, default=1e-3)
    s.add_argument("--transform", default="log1p", choices=rg.TRANSFORMS)
    s.add_argument("--out", required=True)

    s = sub.add_parser("build-filter", help="compute a decision threshold for a model")
    s.add_argument("--dataset", required=True)
    s.add_argument("--format", default="fvecs", choices=vd.FORMATS)
    s.add_argument("--model", required=True)
    s.add_argument("--prepared", required=True)
    s.add_argument("--eps", type=float, required=True)
    s.add_argument("--method", default="fpr", choices=ft.THRESHOLD_METHODS)
    s.add_argument("--t-fpr", type=float, default=0.05)
    s.add_argument("--tau", type=float, default=50)
    s.add_argument("--negatives-source", default="interpolated", choices=ft.NEGATIVE_SOURCES)
    s.add_argument("--out", required=True)

    s = sub.add_parser("join", help="run one similarity-join engine")
    s.add_argument("--r", required=True, help="indexed dataset file")
    s.add_argument("--s", required=True, help="query dataset file")
    s.add_argument("--format", default="fvecs", choices=vd.FORMATS)
    s.add_argument("--metric", default="euclidean", choices=["euclidean", "cosine"])
    s.add_argument("--engine", default="naive",
                   choices=["naive", "learned", "naive-lsbf", "lsh"])
    s.add_argument("--eps", type=float, required=True)
    s.add_argument("--model", default=None)
    s.add_argument("--prepared", default=None)
    s.add_argument("--tau", type=float, default=50)
    s.add_argument("--t-fpr", type=float, default=0.05)
    s.add_argument("--method", default="fpr", choices=ft.THRESHOLD_METHODS)
    s.add_argument("--k", type=int, default=18)
    s.add_argument("--l", type=int, default=10)
    s.add_argument("--W", type=float, default=2.5)
    s.add_argument("--n-p", type=int, default=2)
    s.add_argument("--m-bits", type=int, default=None)
    s.add_argument("--out", required=True, help="pairs CSV; a .json sidecar is written too")

    s = sub.add_parser("bench", help="run a full experiment from a JSON config")
    s.add_argument("--config", dest="bench_config", required=True)

    s = sub.add_parser("sweep", help="speed/recall trade-off sweep from a JSON config")
    s.add_argument("--config", dest="sweep_config", required=True)

    s = sub.add_parser("generalize", help="train-once/reuse check from a JSON config")
    s.add_argument("--config", dest="gen_config", required=True)

    return p


def _load(args, path_attr="dataset", fmt_attr="format", metric="euclidean"):
    return vd.load_dataset(getattr(args, path_attr), getattr(args, fmt_attr),
                           vd.Metric(metric))


def dispatch(argv) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=args.log_level,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.config:
        overrides = json.loads(Path(args.config).read_text())
        for key, value in overrides.items():
            setattr(args, key.replace("-", "_"), value)
    outdir = Path(args.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    log.info("resolved configuration: %s", vars(args))

    cmd = args.cmd
    if cmd == "synth":
        ds = vd.synth_gaussian_mixture(args.n, args.d, args.k, args.spread, args.seed)
        vd.save_dataset(ds, outdir / args.out, args.format)
        log.info("wrote %d x %d vectors to %s", ds.size, ds.dim, args.out)
    elif cmd == "ingest":
        ds = vd.load_dataset(args.input, args.format)
        if args.normalize:
            ds = vd.normalize_unit(ds)
        vd.save_dataset(ds, outdir / args.out, args.out_format)
    elif cmd == "groundtruth":
        ds = _load(args, metric=args.metric)
        grid = _parse_grid(args.eps_grid)
        table = gt.cardinality_grid(ds, ds, grid.values)
        gt.save_table(table, outdir / args.out)
        if args.csv:
            gt.table_to_csv(table, outdir / args.csv)
    elif cmd == "prepare":
        ds = _load(args)
        table = gt.load_table(args.table)
        prepared = sp.prepare_training_set(ds, table, args.strategy, args.s, args.seed)
        sp.save_prepared_csv(prepared, outdir / args.out)
    elif cmd == "train":
        ds = _load(args)
        prepared = sp.load_prepared_csv(args.prepared)
        config = rg.TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                                learning_rate=args.learning_rate, seed=args.seed,
                                target_transform=args.transform)
        model, report = rg.fit(prepared, ds, config)
        rg.save_model(model, outdir / args.out)
        log.info("trained: MAE=%.4f MSE=%.4f wall=%.1fs",
                 report.final_mae, report.final_mse, report.wall_time)
    elif cmd == "build-filter":
        ds = _load(args)
        model = rg.load_model(args.model)
        prepared = sp.load_prepared_csv(args.prepared)
        sel = ft.ThresholdSelection(args.method, args.t_fpr, args.negatives_source)
        filt, info = ft.build_filter(model, ds, prepared, args.eps, sel, args.tau)
        ft.save_filter_descriptor(filt, info, outdir / args.out)
    elif cmd == "join":
        R = vd.load_dataset(args.r, args.format, vd.Metric(args.metric))
        S = vd.load_dataset(args.s, args.format, vd.Metric(args.metric))
        eps = args.eps
        if vd.Metric(args.metric) is vd.Metric.COSINE and args.engine in ("lsh",):
            if not (vd.is_unit_normalized(R) and vd.is_unit_normalized(S)):
                raise DataError("cosine joins through LSH require unit-normalized data")
            eps = vd.convert_epsilon(eps)
        if args.engine == "naive":
            result = jn.naive_join(R, S, args.eps)
        elif args.engine == "learned":
            if not args.model or not args.prepared:
                raise DataError("learned engine needs --model and --prepared")
            model = rg.load_model(args.model)
            prepared = sp.load_prepared_csv(args.prepared)
            result, _, _ = jn.learned_join(R, S, model, prepared, args.eps,
                                           args.tau, args.t_fpr, args.method)
        elif args.engine == "naive-lsbf":
            m_bits = args.m_bits or R.size * args.k
            filt = ft.lsbf_build(R, args.k, args.l, args.W, m_bits, args.seed)
            result = jn.filtered_join(filt, jn.BruteForceSearcher(R), R, S, eps)
        else:  # lsh
            idx = jn.lsh_build(R, args.k, args.l, args.W, args.seed)
            base = jn.LSHSearcher(idx, args.n_p)
            result = jn.filtered_join(lambda q, e: True, base, R, S, eps)
        out = outdir / args.out
        jn.save_join_result(result, out, out.with_suffix(".json"))
        log.info("%d pairs in %.3fs", result.n_pairs, result.total_time)
    elif cmd == "bench":
        cfg = json.loads(Path(args.bench_config).read_text())
        bn.run_experiment(cfg, outdir)
    elif cmd == "sweep":
        cfg = json.loads(Path(args.sweep_config).read_text())
        R, S = bn.load_workload(cfg)
        shared = {}
        if cfg["engine"] in ("learned", "lsh-learned"):
            shared["model"], shared["prepared"] = bn._train_estimator(R, cfg, args.seed)
        bn.tradeoff_sweep(R, S, cfg["eps"], cfg["engine"], cfg["knob"],
                          cfg["values"], outdir / "tradeoff.csv", args.seed,
                          shared, cfg.get("params"))
    elif cmd == "generalize":
        cfg = json.loads(Path(args.gen_config).read_text())
        R1, S1 = bn.load_workload(cfg)
        cfg2 = dict(cfg)
        cfg2["dataset"] = cfg["fresh_dataset"]
        R2, S2 = bn.load_workload(cfg2)
        model, prepared = bn._train_estimator(R1, cfg, args.seed)
        out = bn.generalization_check(model, prepared, R1, S1, R2, S2,
                                      cfg["eps"], cfg.get("tau", 0),
                                      cfg.get("method", "fpr"),
                                      cfg.get("t_fpr", 0.05),
                                      outdir / "generalization.csv")
        log.info("generalization: %s", out)
    return EXIT_OK


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        return dispatch(argv)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else EXIT_USAGE
        return EXIT_OK if code == 0 else code
    except DataError as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"error: numeric: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: data: {exc!r}", file=sys.stderr)
        return EXIT_DATA


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
