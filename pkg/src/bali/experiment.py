"""Experiment configuration and the (seed, split) training/evaluation loop.

A config is a YAML document whose keys map one-to-one onto the dataclasses
below; unknown keys are rejected. ``run_experiment`` writes

* ``metrics.csv``: ``seed,split,iteration,metric,value`` rows,
* ``timing.csv``: wall-clock seconds per evaluation point (kept apart so
  the metrics file is reproducible byte for byte),
* ``errors.csv``: cells that aborted, with the error message,
* ``grid_seed{s}_split{k}.csv`` for synthetic 1-D/2-D inputs,
* optionally ``checkpoint_seed{s}_split{k}.npz`` for BALI runs.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import metrics as M
from .baselines import AdamConfig, MapConfig, fit_noise, init_map, map_step, predict_baseline
from .checkpoint import save_checkpoint
from .datasets import (
    GENERATORS,
    CsvSchema,
    Dataset,
    concat,
    generate,
    load_csv,
    split_indices,
    with_split,
)
from .inference import BaliConfig, Predictive, init_model, predict, train_step
from .linalg import RngStream
from .network import forward, gaussian_nll_grad, mlp, softmax

log = logging.getLogger(__name__)

METHODS = ("bali", "map", "dropout")
REGRESSION_METRICS = ("rmse", "nll", "train_rmse", "train_nll")
CLASSIFICATION_METRICS = ("acc", "nll", "ece", "ood_auc", "train_acc", "train_nll")

TRAIN_STREAM = 3_000_000
TEST_STREAM = 3_500_000
SHUFFLE_STREAM = 4_000_003
OOD_STREAM = 4_500_007


class ConfigError(ValueError):
    pass


@dataclass
class DatasetConfig:
    kind: str = "sinc"
    n: int = 128
    # Separately generated test points for synthetic data.
    test_n: int = 512
    noise_std: float | None = None
    path: str | None = None
    targets: list[str] = field(default_factory=list)
    features: list[str] | None = None
    task: str = "regression"
    test_frac: float = 0.1
    # None: on for CSV data, off for synthetic data.
    standardize: bool | None = None
    ood_n: int = 1000
    ood_box: float = 4.0
    ood_min_dist: float = 1.5


@dataclass
class ModelConfig:
    hidden: list[int] = field(default_factory=lambda: [50])
    activation: str = "relu"


@dataclass
class BaliSection:
    alpha: float = 0.3
    beta: float = 0.2
    sigma_r2: float = 40.0
    sigma_u2: float | None = None
    u0: float | None = None
    # None: the training-set size.
    n_eff: float | None = None
    batch_size: int | None = None
    sigma_init: float = 1.0
    reparam: str = "weight"
    pred_samples: int = 256
    beta_milestones: list[float] = field(default_factory=lambda: [0.6, 0.8])
    beta_decay: float = 5.0


@dataclass
class MapSection:
    lr: float = 1e-3
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int | None = None
    dropout: float = 0.1
    sigma_init: float = 1.0
    pred_samples: int = 128


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    method: str = "bali"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    bali: BaliSection = field(default_factory=BaliSection)
    map: MapSection = field(default_factory=MapSection)
    seeds: list[int] = field(default_factory=lambda: [0])
    splits: int = 1
    iterations: int = 1000
    # None: every ceil(10 N / B) iterations.
    eval_every: int | None = None
    metrics: list[str] | None = None
    grid: bool = True
    checkpoint: bool = False
    output: str = "results"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}")
        if self.dataset.kind not in (*GENERATORS, "csv"):
            raise ConfigError(f"unknown dataset kind {self.dataset.kind!r}")
        if self.dataset.kind == "csv":
            if not self.dataset.path:
                raise ConfigError("csv datasets need a path")
            if not Path(self.dataset.path).exists():
                raise ConfigError(f"dataset file {self.dataset.path} does not exist")
            if not self.dataset.targets:
                raise ConfigError("csv datasets need target columns")
        if self.iterations < 0 or self.splits < 1 or not self.seeds:
            raise ConfigError("need iterations >= 0, splits >= 1 and at least one seed")
        if self.eval_every is not None and self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        allowed = REGRESSION_METRICS if self.task == "regression" else CLASSIFICATION_METRICS
        for m in self.metrics or ():
            if m not in allowed:
                raise ConfigError(f"metric {m!r} not available for task {self.task!r}")

    @property
    def task(self) -> str:
        if self.dataset.kind == "csv":
            return self.dataset.task
        return "softmax" if self.dataset.kind == "two-moons" else "regression"

    @property
    def metric_names(self) -> list[str]:
        if self.metrics:
            return list(self.metrics)
        if self.task == "regression":
            return ["rmse", "nll"]
        return ["acc", "nll", "ece"]


def _build(cls, data: Any, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for name, value in data.items():
        sub = _SECTIONS.get((cls, name))
        kwargs[name] = _build(sub, value, f"{where}.{name}") if sub else value
    try:
        return cls(**kwargs)
    except TypeError as err:
        raise ConfigError(f"{where}: {err}") from None


_SECTIONS = {
    (ExperimentConfig, "dataset"): DatasetConfig,
    (ExperimentConfig, "model"): ModelConfig,
    (ExperimentConfig, "bali"): BaliSection,
    (ExperimentConfig, "map"): MapSection,
}


def config_from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data, "config")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    return config_from_dict(data or {})


# Data preparation.


def build_dataset(cfg: ExperimentConfig, seed: int, split: int) -> Dataset:
    d = cfg.dataset
    if d.kind == "csv":
        raw = load_csv(d.path, CsvSchema(tuple(d.targets), d.task, tuple(d.features) if d.features else None))
        std = True if d.standardize is None else d.standardize
        return with_split(raw, split_indices(raw.n, split, d.test_frac), std, std)
    train = generate(d.kind, d.n, RngStream(seed, TRAIN_STREAM + split), d.noise_std)
    test = generate(d.kind, d.test_n, RngStream(seed, TEST_STREAM + split), d.noise_std)
    ds = concat(train, test)
    std = False if d.standardize is None else d.standardize
    return with_split(ds, ds.split, std, std)


def ood_points(train_X: np.ndarray, n: int, box: float, min_dist: float, rng: RngStream) -> np.ndarray:
    """Uniform points in ``[-box, box]^d`` farther than ``min_dist`` from every training input."""
    out = []
    have = 0
    for _ in range(1000):
        u = rng.uniform((4 * n, train_X.shape[1]), -box, box)
        d2 = ((u[:, None, :] - train_X[None, :, :]) ** 2).sum(-1).min(axis=1)
        keep = u[d2 > min_dist**2]
        out.append(keep)
        have += len(keep)
        if have >= n:
            break
    pts = np.concatenate(out)[:n]
    if len(pts) < n:
        raise RuntimeError("could not place enough out-of-distribution points")
    return pts


class Batcher:
    """Mini-batches from successive random permutations of the training set."""

    def __init__(self, n: int, batch_size: int, rng: RngStream):
        self.n = n
        self.batch_size = min(batch_size, n)
        self.rng = rng
        self._order = np.arange(0)

    def next(self) -> np.ndarray:
        if self.batch_size == self.n:
            return np.arange(self.n)
        if len(self._order) < self.batch_size:
            self._order = np.concatenate([self._order, self.rng.permutation(self.n)])
        idx, self._order = self._order[: self.batch_size], self._order[self.batch_size :]
        return idx


# Models.


def bali_config(cfg: ExperimentConfig, n_train: int, seed: int) -> BaliConfig:
    b = cfg.bali
    return BaliConfig(
        alpha=b.alpha,
        beta=b.beta,
        n_eff=float(b.n_eff or n_train),
        batch_size=int(b.batch_size or n_train),
        sigma_r2=b.sigma_r2,
        sigma_u2=b.sigma_u2,
        u0=b.u0,
        sigma_init=b.sigma_init,
        reparam=b.reparam,
        task=cfg.task,
        total_iters=cfg.iterations,
        pred_samples=b.pred_samples,
        beta_milestones=tuple(b.beta_milestones),
        beta_decay=b.beta_decay,
        seed=seed,
    )


def map_config(cfg: ExperimentConfig, seed: int) -> MapConfig:
    m = cfg.map
    adam = AdamConfig(m.lr, m.beta1, m.beta2, m.eps, m.weight_decay)
    dropout = m.dropout if cfg.method == "dropout" else 0.0
    return MapConfig(cfg.task, adam, dropout, m.sigma_init, m.pred_samples, seed)


class Runner:
    """Uniform train/predict interface over BALI and the baselines."""

    def __init__(self, cfg: ExperimentConfig, d_in: int, d_out: int, n_train: int, seed: int):
        specs = mlp(d_in, cfg.model.hidden, d_out, cfg.model.activation)
        self.method = cfg.method
        if cfg.method == "bali":
            self.model = init_model(specs, bali_config(cfg, n_train, seed))
            self.batch_size = self.model.config.batch_size
        else:
            self.model = init_map(specs, map_config(cfg, seed))
            self.batch_size = int(cfg.map.batch_size or n_train)

    def step(self, X, y):
        if self.method == "bali":
            train_step(self.model, X, y)
        else:
            map_step(self.model, X, y)

    def predictive(self, X, Xtr=None, ytr=None) -> Predictive:
        if self.method == "bali":
            return predict(self.model, X)
        if self.model.config.task == "regression":
            fit_noise(self.model, Xtr, ytr)
        return predict_baseline(self.model, X)


def _output_dim(ds: Dataset) -> int:
    if ds.is_regression:
        return ds.y.shape[1]
    return int(ds.y.max()) + 1 if ds.task == "softmax" else 1


def regression_scores(pred: Predictive, y_std: np.ndarray, ds: Dataset, prefix: str) -> dict[str, float]:
    """RMSE and NLL in the original target units."""
    st = ds.y_stats
    mean = pred.mean if st is None else st.invert(pred.mean)
    y = y_std if st is None else st.invert(y_std)
    loglik = pred.log_likelihood(y_std)
    if st is not None:
        loglik = loglik - np.sum(np.log(st.std))
    return {f"{prefix}rmse": M.rmse(mean, y), f"{prefix}nll": M.nll(loglik)}


def classification_scores(pred: Predictive, y: np.ndarray, prefix: str) -> dict[str, float]:
    probs = pred.probs
    return {
        f"{prefix}acc": M.accuracy(probs, y),
        f"{prefix}nll": M.nll(pred.log_likelihood(y)),
        f"{prefix}ece": M.ece(probs, y),
    }


def evaluate(runner: Runner, ds: Dataset, names, ood_X=None) -> dict[str, float]:
    Xtr, ytr = ds.train()
    Xte, yte = ds.test()
    out = {}
    need_train = any(n.startswith("train_") for n in names)
    if ds.is_regression:
        pred = runner.predictive(Xte, Xtr, ytr)
        out.update(regression_scores(pred, yte, ds, ""))
        if need_train:
            out.update(regression_scores(runner.predictive(Xtr, Xtr, ytr), ytr, ds, "train_"))
    else:
        pred = runner.predictive(Xte)
        out.update(classification_scores(pred, yte, ""))
        if need_train:
            out.update(classification_scores(runner.predictive(Xtr), ytr, "train_"))
        if "ood_auc" in names:
            out["ood_auc"] = M.ood_auc(pred.entropy, runner.predictive(ood_X).entropy)
    return {n: out[n] for n in names}


def prediction_grid(runner: Runner, ds: Dataset, step: float = 0.01, low: float = -2.0, high: float = 2.0):
    """Grid inputs with predictive mean and std per point (original units)."""
    d = ds.X.shape[1]
    if d == 1:
        g = np.round(np.arange(round((high - low) / step) + 1) * step + low, 10)
        grid = g[:, None]
    elif d == 2:
        g = np.round(np.arange(-40, 41) * 0.1, 10)
        grid = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
    else:
        return None
    Xg = grid if ds.x_stats is None else ds.x_stats.apply(grid)
    Xtr, ytr = ds.train()
    pred = runner.predictive(Xg, Xtr, ytr)
    if ds.is_regression:
        mean, std = pred.mean, pred.std
        if ds.y_stats is not None:
            mean, std = ds.y_stats.invert(mean), std * ds.y_stats.std
    else:
        p1 = _class1_draws(pred)
        mean, std = p1.mean(0)[:, None], p1.std(0)[:, None]
    return grid, mean, std


def _class1_draws(pred: Predictive) -> np.ndarray:
    if pred.task == "sigmoid":
        return 1.0 / (1.0 + np.exp(-pred.samples[..., 0]))
    return np.stack([softmax(s)[:, 1] for s in pred.samples])


def plugin_nll(runner: Runner, X, y) -> float:
    """Mean Gaussian NLL of the point prediction on ``(X, y)``.

    BALI uses the posterior-mean weights with the last layer's noise
    covariance; the baselines use their weights with the residual variance.
    """
    model = runner.model
    if runner.method == "bali":
        weights, noise = model.weights("deterministic"), model.noise_cov
    else:
        weights, noise = model.weights, np.diag(fit_noise(model, X, y))
    z = forward(model.specs, weights, X).output
    return -gaussian_nll_grad(z, y, noise)[0] / len(X)


def nll_curve(cfg: ExperimentConfig, seed: int, every: int = 1, split: int = 0):
    """Training NLL of the point prediction after every ``every`` iterations."""
    ds = build_dataset(cfg, seed, split)
    if not ds.is_regression:
        raise ValueError("nll_curve needs a regression dataset")
    Xtr, ytr = ds.train()
    runner = Runner(cfg, ds.X.shape[1], _output_dim(ds), len(Xtr), seed)
    batcher = Batcher(len(Xtr), runner.batch_size, RngStream(seed, SHUFFLE_STREAM + split))
    its, vals = [], []
    for it in range(1, cfg.iterations + 1):
        idx = batcher.next()
        runner.step(Xtr[idx], ytr[idx])
        if it % every == 0 or it == cfg.iterations:
            its.append(it)
            vals.append(plugin_nll(runner, Xtr, ytr))
    return np.array(its), np.array(vals)


def fit(cfg: ExperimentConfig, seed: int, split: int = 0) -> tuple[Runner, Dataset]:
    """Train one cell for ``cfg.iterations`` steps without evaluating."""
    ds = build_dataset(cfg, seed, split)
    Xtr, ytr = ds.train()
    runner = Runner(cfg, ds.X.shape[1], _output_dim(ds), len(Xtr), seed)
    batcher = Batcher(len(Xtr), runner.batch_size, RngStream(seed, SHUFFLE_STREAM + split))
    for _ in range(cfg.iterations):
        idx = batcher.next()
        runner.step(Xtr[idx], ytr[idx])
    return runner, ds


def cell_ood_points(cfg: ExperimentConfig, ds: Dataset, seed: int, split: int = 0) -> np.ndarray:
    """OOD inputs for a cell, in the model's (possibly standardized) input space."""
    pts = ood_points(ds.X[ds.split.train], cfg.dataset.ood_n, cfg.dataset.ood_box, cfg.dataset.ood_min_dist,
                     RngStream(seed, OOD_STREAM + split))
    return pts if ds.x_stats is None else ds.x_stats.apply(pts)


@dataclass
class ExperimentResult:
    rows: list[tuple]
    errors: list[tuple]
    out_dir: Path


def run_cell(cfg: ExperimentConfig, seed: int, split: int, out_dir: Path | None = None):
    """Train one (seed, split) cell; yields ``(iteration, metrics, seconds)``."""
    ds = build_dataset(cfg, seed, split)
    Xtr, ytr = ds.train()
    runner = Runner(cfg, ds.X.shape[1], _output_dim(ds), len(Xtr), seed)
    names = cfg.metric_names
    ood_X = cell_ood_points(cfg, ds, seed, split) if "ood_auc" in names else None
    every = cfg.eval_every or math.ceil(10 * len(Xtr) / runner.batch_size)
    batcher = Batcher(len(Xtr), runner.batch_size, RngStream(seed, SHUFFLE_STREAM + split))
    start = time.perf_counter()
    yield 0, evaluate(runner, ds, names, ood_X), 0.0
    for it in range(1, cfg.iterations + 1):
        idx = batcher.next()
        runner.step(Xtr[idx], ytr[idx])
        if it % every == 0 or it == cfg.iterations:
            yield it, evaluate(runner, ds, names, ood_X), time.perf_counter() - start
    if out_dir is not None:
        if cfg.grid and cfg.dataset.kind != "csv":
            res = prediction_grid(runner, ds)
            if res is not None:
                write_grid(out_dir / f"grid_seed{seed}_split{split}.csv", *res)
        if cfg.checkpoint and cfg.method == "bali":
            save_checkpoint(runner.model, out_dir / f"checkpoint_seed{seed}_split{split}.npz",
                            ds.x_stats, ds.y_stats)


def write_grid(path: Path, grid, mean, std):
    header = [f"x{i}" for i in range(grid.shape[1])]
    header += [f"mean{i}" for i in range(mean.shape[1])] + [f"std{i}" for i in range(std.shape[1])]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in np.concatenate([grid, mean, std], axis=1):
            w.writerow([repr(float(v)) for v in row])


def run_experiment(cfg: ExperimentConfig, out_dir=None, seeds=None) -> ExperimentResult:
    out = Path(out_dir or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    rows, timing, errors = [], [], []
    for seed in seeds if seeds is not None else cfg.seeds:
        for split in range(cfg.splits):
            try:
                for it, values, secs in run_cell(cfg, seed, split, out):
                    rows.extend((seed, split, it, k, v) for k, v in values.items())
                    timing.append((seed, split, it, secs))
                    log.info("seed %d split %d iter %d %s", seed, split, it,
                             " ".join(f"{k}={v:.4g}" for k, v in values.items()))
            except Exception as err:  # the cell is recorded and skipped
                log.error("seed %d split %d failed: %s", seed, split, err)
                errors.append((seed, split, f"{type(err).__name__}: {err}"))
    _write_rows(out / "metrics.csv", ("seed", "split", "iteration", "metric", "value"),
                [(s, k, i, m, repr(float(v))) for s, k, i, m, v in rows])
    _write_rows(out / "timing.csv", ("seed", "split", "iteration", "seconds"), timing)
    _write_rows(out / "errors.csv", ("seed", "split", "error"), errors)
    return ExperimentResult(rows, errors, out)


def _write_rows(path: Path, header, rows):
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def summarize(rows, metric: str, iteration: int | None = None) -> tuple[float, float]:
    """Mean and standard error over cells of ``metric`` at ``iteration`` (default: last)."""
    vals = {}
    for seed, split, it, m, v in rows:
        if m == metric and (iteration is None or it == iteration):
            key = (seed, split)
            if key not in vals or it >= vals[key][0]:
                vals[key] = (it, v)
    a = np.array([v for _, v in vals.values()], dtype=float)
    if a.size == 0:
        raise KeyError(f"no rows for metric {metric!r}")
    se = a.std(ddof=1) / np.sqrt(a.size) if a.size > 1 else 0.0
    return float(a.mean()), float(se)
