"""Command-line entry point: ``run``, ``gen-data``, ``eval`` and ``check``."""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import metrics as M
from .checkpoint import load_checkpoint
from .datasets import GENERATORS, CsvSchema, generate, load_csv, save_csv
from .experiment import ConfigError, load_config, run_experiment
from .inference import predict
from .linalg import RngStream
from .oracles import SUITES, run_suite

DATA_STREAM = 5_000_011


def _run(args) -> int:
    cfg = load_config(args.config)
    seeds = [args.seed] if args.seed is not None else None
    res = run_experiment(cfg, args.out, seeds)
    print(f"wrote {res.out_dir / 'metrics.csv'} ({len(res.rows)} rows)")
    for seed, split, msg in res.errors:
        print(f"seed {seed} split {split} failed: {msg}", file=sys.stderr)
    return 1 if res.errors else 0


def _gen_data(args) -> int:
    ds = generate(args.name, args.n, RngStream(args.seed, DATA_STREAM), args.noise)
    save_csv(ds, args.out)
    print(f"wrote {args.n} rows to {args.out}")
    return 0


def _eval(args) -> int:
    model, x_stats, y_stats = load_checkpoint(args.checkpoint)
    task = model.config.task
    data = load_csv(args.data, CsvSchema(tuple(args.target), task))
    X = data.X if x_stats is None else x_stats.apply(data.X)
    pred = predict(model, X, args.samples)
    names = args.metrics.split(",")
    out = {}
    for name in names:
        if task == "regression":
            y_std = data.y if y_stats is None else y_stats.apply(data.y)
            if name == "rmse":
                mean = pred.mean if y_stats is None else y_stats.invert(pred.mean)
                out[name] = M.rmse(mean, data.y)
            elif name == "nll":
                ll = pred.log_likelihood(y_std)
                if y_stats is not None:
                    ll = ll - np.sum(np.log(y_stats.std))
                out[name] = M.nll(ll)
            else:
                raise ValueError(f"metric {name!r} not available for regression")
        else:
            if name == "acc":
                out[name] = M.accuracy(pred.probs, data.y)
            elif name == "nll":
                out[name] = M.nll(pred.log_likelihood(data.y))
            elif name == "ece":
                out[name] = M.ece(pred.probs, data.y)
            else:
                raise ValueError(f"metric {name!r} not available for classification")
    for k, v in out.items():
        print(f"{k}\t{v:.6g}")
    return 0


def _check(args) -> int:
    suites = SUITES if args.suite == "all" else (args.suite,)
    failed = 0
    for suite in suites:
        for c in run_suite(suite, args.seed):
            status = "ok" if c.ok else "FAIL"
            print(f"{suite:10s} {c.name:28s} max deviation {c.deviation:.3e} (tol {c.tol:.0e}) {status}")
            failed += not c.ok
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bali", description="Layerwise Bayesian inference for neural networks.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment from a YAML config")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    r.set_defaults(func=_run)

    g = sub.add_parser("gen-data", help="write a synthetic dataset as CSV")
    g.add_argument("--name", required=True, choices=GENERATORS)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--noise", type=float, help="noise std (default: the dataset's own)")
    g.add_argument("--out", required=True)
    g.set_defaults(func=_gen_data)

    e = sub.add_parser("eval", help="evaluate a saved model on a CSV file")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--metrics", default="rmse,nll", help="comma-separated metric names")
    e.add_argument("--target", nargs="+", default=["y"], help="target column name(s)")
    e.add_argument("--samples", type=int, help="posterior draws (default: from the model config)")
    e.set_defaults(func=_eval)

    c = sub.add_parser("check", help="run the numerical oracle suites")
    c.add_argument("--suite", required=True, choices=(*SUITES, "all"))
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
