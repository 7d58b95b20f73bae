"""Real-data ingestion, train/test splitting and train-only preprocessing.

Features are min-max scaled with training statistics and centred by -0.5;
the target is z-scored with the training mean and standard deviation.
Test rows reuse the training statistics and are not clipped.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, InputError
from .predict import PredictiveMoments

# expected feature counts of the public benchmarks (target column excluded)
KNOWN_DATASETS = {"superconductivity": 79, "yearpredictionmsd": 90}


@dataclass
class RawTable:
    X: np.ndarray
    y: np.ndarray
    feature_names: list
    target_name: str

    def take(self, rows) -> "RawTable":
        return RawTable(self.X[rows], self.y[rows], list(self.feature_names), self.target_name)

    @property
    def n(self) -> int:
        return self.X.shape[0]


def load_csv(path, target: str, expected_features: int | None = None) -> RawTable:
    """Read a numeric CSV with a header row; row order is preserved."""
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise DataError(f"{path}: empty file or missing header row")
        header = [h.strip() for h in header]
        if target not in header:
            raise DataError(f"{path}: target column {target!r} not in header")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {lineno} has {len(row)} cells, header has {len(header)}")
            values = []
            for col, cell in zip(header, row):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise DataError(f"{path}: non-numeric or missing cell at row {lineno}, column {col!r}: {cell!r}") from None
            rows.append(values)
    if not rows:
        raise DataError(f"{path}: no data rows")
    data = np.array(rows)
    t = header.index(target)
    features = [h for j, h in enumerate(header) if j != t]
    X = np.delete(data, t, axis=1)
    if expected_features is not None and X.shape[1] != expected_features:
        raise DataError(f"{path}: expected {expected_features} feature columns, found {X.shape[1]}")
    return RawTable(X, data[:, t], features, target)


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = 0.10
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.test_fraction < 1.0):
            raise InputError(f"test_fraction must lie in (0, 1), got {self.test_fraction}")


def split_indices(n: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng(spec.seed).permutation(n)
    n_test = int(round(n * spec.test_fraction))
    n_test = min(max(n_test, 1), n - 1) if n > 1 else 0
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def split(table: RawTable, spec: SplitSpec) -> tuple[RawTable, RawTable]:
    train_idx, test_idx = split_indices(table.n, spec)
    return table.take(train_idx), table.take(test_idx)


def subsample(table: RawTable, n: int, seed: int = 0) -> RawTable:
    """Random rows without replacement, original order kept."""
    if not (1 <= n <= table.n):
        raise InputError(f"subsample size must be in [1, {table.n}], got {n}")
    idx = np.sort(np.random.default_rng(seed).choice(table.n, size=n, replace=False))
    return table.take(idx)


@dataclass(frozen=True)
class Preprocessor:
    minima: np.ndarray
    maxima: np.ndarray
    mu_y: float
    sigma_y: float
    feature_names: tuple = ()
    target_name: str = "y"

    @classmethod
    def fit(cls, train: RawTable) -> "Preprocessor":
        sigma_y = float(np.std(train.y, ddof=1)) if train.n > 1 else 0.0
        if not sigma_y > 0:
            raise DataError("training target has zero spread; cannot standardize")
        return cls(train.X.min(axis=0), train.X.max(axis=0), float(np.mean(train.y)), sigma_y,
                   tuple(train.feature_names), train.target_name)

    def transform_X(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        span = self.maxima - self.minima
        const = span == 0
        scaled = (X - self.minima) / np.where(const, 1.0, span)
        scaled[:, const] = 0.5
        return scaled - 0.5

    def transform_y(self, y) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.mu_y) / self.sigma_y

    def inverse_y(self, z) -> np.ndarray:
        return np.asarray(z, dtype=float) * self.sigma_y + self.mu_y

    def nugget_to_original(self, sigma_eps2_z: float) -> float:
        return sigma_eps2_z * self.sigma_y**2

    def to_dict(self) -> dict:
        return {
            "minima": self.minima.tolist(),
            "maxima": self.maxima.tolist(),
            "mu_y": self.mu_y,
            "sigma_y": self.sigma_y,
            "feature_names": list(self.feature_names),
            "target_name": self.target_name,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Preprocessor":
        return cls(np.asarray(d["minima"], dtype=float), np.asarray(d["maxima"], dtype=float),
                   float(d["mu_y"]), float(d["sigma_y"]), tuple(d.get("feature_names", ())),
                   d.get("target_name", "y"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "Preprocessor":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class ProcessedSplit:
    X: np.ndarray
    y: np.ndarray
    y_raw: np.ndarray


def fit_transform(train: RawTable, test: RawTable) -> tuple[ProcessedSplit, ProcessedSplit, Preprocessor]:
    pre = Preprocessor.fit(train)
    return (
        ProcessedSplit(pre.transform_X(train.X), pre.transform_y(train.y), train.y),
        ProcessedSplit(pre.transform_X(test.X), pre.transform_y(test.y), test.y),
        pre,
    )


def destandardize(preds: PredictiveMoments, pre: Preprocessor) -> PredictiveMoments:
    return PredictiveMoments(pre.inverse_y(preds.mu_star), preds.var_star * pre.sigma_y**2)
