"""Synthetic generators, CSV loading, train/test splits and standardization."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .linalg import RngStream

SPLIT_STREAM = 2_000_003

SINES_TREND = dict(a=0.3, b=0.3, c=1.0, noise_std=0.02)
SINC = dict(a=20.0, b=2.0, c=-1.0, noise_std=0.1)


class DatasetError(ValueError):
    pass


class EmptyDataset(DatasetError):
    pass


class CsvParseError(DatasetError):
    def __init__(self, path, line: int, msg: str):
        super().__init__(f"{path}:{line}: {msg}")
        self.line = line


class MissingColumn(DatasetError):
    pass


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, a: np.ndarray) -> "Standardizer":
        a = np.asarray(a, dtype=float)
        std = a.std(axis=0)
        # Constant columns pass through unscaled.
        return cls(a.mean(axis=0), np.where(std > 0, std, 1.0))

    @classmethod
    def identity(cls, dim: int) -> "Standardizer":
        return cls(np.zeros(dim), np.ones(dim))

    def apply(self, a):
        return (np.asarray(a, dtype=float) - self.mean) / self.std

    def invert(self, a):
        return np.asarray(a, dtype=float) * self.std + self.mean

    def invert_var(self, var):
        return np.asarray(var, dtype=float) * self.std**2


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    test: np.ndarray
    seed: int = 0


@dataclass(frozen=True)
class Dataset:
    """Inputs ``X`` (n x d) and targets ``y``: an (n x k) real matrix for
    regression, or a length-n vector of class indices for classification.

    ``x_stats`` and ``y_stats`` are fitted on the training split only.
    """

    X: np.ndarray
    y: np.ndarray
    task: str = "regression"
    name: str = ""
    split: Split | None = None
    x_stats: Standardizer | None = None
    y_stats: Standardizer | None = None

    def __post_init__(self):
        if self.X.ndim != 2:
            raise DatasetError(f"inputs must be a matrix, got shape {self.X.shape}")
        if len(self.y) != len(self.X):
            raise DatasetError(f"{len(self.X)} inputs but {len(self.y)} targets")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise DatasetError("dataset contains NaN or infinite values")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def is_regression(self) -> bool:
        return self.task == "regression"

    def _part(self, idx):
        X, y = self.X[idx], self.y[idx]
        if self.x_stats is not None:
            X = self.x_stats.apply(X)
        if self.y_stats is not None:
            y = self.y_stats.apply(y)
        return X, y

    def train(self) -> tuple[np.ndarray, np.ndarray]:
        """Training inputs and targets, standardized when statistics are set."""
        return self._part(self._indices().train)

    def test(self) -> tuple[np.ndarray, np.ndarray]:
        return self._part(self._indices().test)

    def raw_test_targets(self) -> np.ndarray:
        return self.y[self._indices().test]

    def _indices(self) -> Split:
        if self.split is None:
            return Split(np.arange(self.n), np.arange(0))
        return self.split


def split_indices(n: int, seed: int, test_frac: float = 0.1) -> Split:
    """Random disjoint train/test partition; a pure function of ``(n, seed)``."""
    if n < 2:
        raise DatasetError("need at least two rows to split")
    if not 0 < test_frac < 1:
        raise ValueError("test_frac must lie in (0, 1)")
    perm = RngStream(seed, SPLIT_STREAM).permutation(n)
    n_test = max(1, int(round(test_frac * n)))
    return Split(np.sort(perm[n_test:]), np.sort(perm[:n_test]), seed)


def with_split(ds: Dataset, split: Split, standardize_x=True, standardize_y=True) -> Dataset:
    """Attach ``split`` and fit standardization on its training rows."""
    Xtr = ds.X[split.train]
    x_stats = Standardizer.fit(Xtr) if standardize_x else None
    y_stats = None
    if standardize_y and ds.is_regression:
        y_stats = Standardizer.fit(ds.y[split.train])
    return replace(ds, split=split, x_stats=x_stats, y_stats=y_stats)


def concat(train: Dataset, test: Dataset) -> Dataset:
    """Join a separately generated test set onto a training set as one split."""
    X = np.concatenate([train.X, test.X])
    y = np.concatenate([train.y, test.y])
    split = Split(np.arange(train.n), np.arange(train.n, train.n + test.n))
    return Dataset(X, y, train.task, train.name, split)


# Synthetic generators.


def sines_trend(x, a=0.3, b=0.3, c=1.0):
    return a * np.sin(2 * np.pi * x) + b * np.sin(4 * np.pi * x) + c * x


def sinc(x, a=20.0, b=2.0, c=-1.0):
    # np.sinc(t) = sin(pi t) / (pi t)
    return b * np.sinc(a * np.asarray(x) / np.pi) + c


def gen_sines_trend(n: int, rng: RngStream, noise_std: float = SINES_TREND["noise_std"]) -> Dataset:
    """Inputs split evenly between [-1, -0.25] and [0.25, 1]."""
    if n < 1:
        raise ValueError("n must be >= 1")
    n_left = (n + 1) // 2
    u = rng.uniform((n,), 0.25, 1.0)
    x = np.concatenate([-u[:n_left], u[n_left:]])[:, None]
    y = sines_trend(x) + noise_std * rng.normal((n, 1))
    return Dataset(x, y, "regression", "sines-trend")


def gen_sinc(n: int, rng: RngStream, noise_std: float = SINC["noise_std"]) -> Dataset:
    if n < 1:
        raise ValueError("n must be >= 1")
    x = rng.uniform((n, 1), -1.0, 1.0)
    y = sinc(x) + noise_std * rng.normal((n, 1))
    return Dataset(x, y, "regression", "sinc")


MOON_CENTERS = (np.array([0.0, 0.0]), np.array([1.0, 0.5]))


def gen_two_moons(n: int, noise_std: float, rng: RngStream) -> Dataset:
    """Two interleaving unit half-circles with isotropic Gaussian noise.

    Class 0 lies on the upper arc ``(cos t, sin t)``, class 1 on the lower
    arc ``(1 - cos t, 0.5 - sin t)``, ``t`` evenly spaced on ``[0, pi]``.
    Rows are shuffled.
    """
    if n < 2 or n % 2:
        raise ValueError("n must be a positive even number")
    half = n // 2
    t = np.linspace(0.0, np.pi, half)
    upper = np.stack([np.cos(t), np.sin(t)], axis=1)
    lower = np.stack([1.0 - np.cos(t), 0.5 - np.sin(t)], axis=1)
    X = np.concatenate([upper, lower]) + noise_std * rng.normal((n, 2))
    y = np.repeat([0, 1], half)
    perm = rng.permutation(n)
    return Dataset(X[perm], y[perm], "softmax", "two-moons")


GENERATORS = ("sines-trend", "sinc", "two-moons")


def generate(name: str, n: int, rng: RngStream, noise_std: float | None = None) -> Dataset:
    if name == "sines-trend":
        return gen_sines_trend(n, rng, SINES_TREND["noise_std"] if noise_std is None else noise_std)
    if name == "sinc":
        return gen_sinc(n, rng, SINC["noise_std"] if noise_std is None else noise_std)
    if name == "two-moons":
        return gen_two_moons(n, 0.2 if noise_std is None else noise_std, rng)
    raise ValueError(f"unknown generator {name!r}; choose from {GENERATORS}")


# CSV input and output.


@dataclass(frozen=True)
class CsvSchema:
    targets: tuple[str, ...]
    task: str = "regression"
    # None means every non-target column.
    features: tuple[str, ...] | None = None


def load_csv(path, schema: CsvSchema) -> Dataset:
    """Read a headed, comma-separated numeric table."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyDataset(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        rows = []
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise CsvParseError(path, reader.line_num, f"expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                bad = next(c for c in row if not _is_float(c))
                raise CsvParseError(path, reader.line_num, f"non-numeric cell {bad!r}") from None
    if not rows:
        raise EmptyDataset(f"{path}: no data rows")
    for name in schema.targets:
        if name not in header:
            raise MissingColumn(f"{path}: target column {name!r} not found")
    features = schema.features
    if features is None:
        features = tuple(h for h in header if h not in schema.targets)
    for name in features:
        if name not in header:
            raise MissingColumn(f"{path}: feature column {name!r} not found")
    data = np.asarray(rows)
    X = data[:, [header.index(h) for h in features]]
    y = data[:, [header.index(h) for h in schema.targets]]
    if schema.task != "regression":
        if y.shape[1] != 1 or not np.all(y == np.round(y)):
            raise DatasetError("classification needs one integer label column")
        y = y[:, 0].astype(int)
    return Dataset(X, y, schema.task, path.stem)


def _is_float(c: str) -> bool:
    try:
        float(c)
    except ValueError:
        return False
    return True


def save_csv(ds: Dataset, path, x_names: Sequence[str] | None = None, y_names: Sequence[str] | None = None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    y = ds.y if ds.y.ndim == 2 else ds.y[:, None]
    x_names = list(x_names or [f"x{i}" for i in range(ds.X.shape[1])])
    y_names = list(y_names or (["y"] if y.shape[1] == 1 else [f"y{i}" for i in range(y.shape[1])]))
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(x_names + y_names)
        for xr, yr in zip(ds.X, y):
            w.writerow([repr(float(v)) for v in xr] + [_cell(v) for v in yr])
    return path


def _cell(v):
    return str(int(v)) if isinstance(v, (np.integer, int)) else repr(float(v))
