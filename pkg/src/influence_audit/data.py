"""Datasets: CSV ingestion, synthetic generators, normalization, corruption.

A :class:`Dataset` is immutable. Every row carries a stable integer id that
survives subsetting and removal, so results can always be traced back to
the original row.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigurationError,
    DataError,
    EmptyDataError,
    IngestionError,
    InsufficientDataError,
    UnsupportedTaskError,
)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Inputs, targets and row ids.

    Regression targets are an ``(N, m)`` float matrix; classification
    targets are ``N`` integer labels in ``[0, num_classes)``.
    """

    inputs: np.ndarray
    targets: np.ndarray
    ids: np.ndarray
    num_classes: int | None = None
    _pos: dict = field(init=False, repr=False)

    def __post_init__(self):
        X = np.array(self.inputs, dtype=np.float64)
        if X.ndim != 2:
            raise DataError("inputs must be a 2-D array")
        n = X.shape[0]
        if self.num_classes is None:
            T = np.array(self.targets, dtype=np.float64)
            if T.ndim == 1:
                T = T.reshape(-1, 1)
        else:
            T = np.array(self.targets)
            if T.ndim != 1:
                raise DataError("classification targets must be a label vector")
            if n and not np.all(T == np.round(T)):
                raise DataError("classification labels must be integers")
            T = T.astype(np.int64)
            if n and (T.min() < 0 or T.max() >= self.num_classes):
                raise DataError(f"labels must lie in [0, {self.num_classes})")
        ids = np.array(self.ids, dtype=np.int64)
        if T.shape[0] != n or ids.shape != (n,):
            raise DataError("inputs, targets and ids disagree on the row count")
        if not np.all(np.isfinite(X)) or not np.all(np.isfinite(T)):
            raise DataError("dataset contains non-finite values")
        for arr in (X, T, ids):
            arr.setflags(write=False)
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "targets", T)
        object.__setattr__(self, "ids", ids)
        pos = {int(i): k for k, i in enumerate(ids)}
        if len(pos) != n:
            raise DataError("row ids must be unique")
        object.__setattr__(self, "_pos", pos)

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def is_classification(self):
        return self.num_classes is not None

    @property
    def n_features(self):
        return self.inputs.shape[1]

    def positions(self, ids):
        """Row positions of the given ids; raises ``KeyError`` for unknown ids."""
        out = []
        for i in ids:
            try:
                out.append(self._pos[int(i)])
            except KeyError:
                raise KeyError(f"unknown row id {i}") from None
        return np.array(out, dtype=np.int64)

    def take(self, positions):
        positions = np.asarray(positions, dtype=np.int64)
        return Dataset(
            self.inputs[positions],
            self.targets[positions],
            self.ids[positions],
            self.num_classes,
        )

    def with_targets(self, targets):
        return Dataset(self.inputs, targets, self.ids, self.num_classes)

    def with_inputs(self, inputs):
        return Dataset(inputs, self.targets, self.ids, self.num_classes)


@dataclass(frozen=True)
class CsvSchema:
    """Column roles for CSV ingestion.

    ``features`` of ``None`` means every column not listed in ``targets``.
    """

    targets: tuple[str, ...]
    features: tuple[str, ...] | None = None
    task: str = "regression"
    num_classes: int | None = None


@dataclass(frozen=True)
class NormalizationParams:
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    target_mean: np.ndarray | None = None
    target_scale: np.ndarray | None = None


@dataclass(frozen=True)
class CorruptionRecord:
    corrupted_indices: frozenset
    original_labels: dict
    seed: int
    fraction: float


def load_csv(path, schema):
    """Read a comma-separated file with a header line into a Dataset.

    Row order is preserved and ids are assigned ``0..N-1``.
    """
    if schema.task not in ("regression", "classification"):
        raise ConfigurationError(f"unknown task {schema.task!r}")
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestionError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyDataError(f"{path} is empty") from None
        missing = [c for c in schema.targets if c not in header]
        features = schema.features
        if features is None:
            features = tuple(c for c in header if c not in schema.targets)
        missing += [c for c in features if c not in header]
        if missing:
            raise IngestionError(f"columns not in header: {missing}", row=1)
        f_idx = [header.index(c) for c in features]
        t_idx = [header.index(c) for c in schema.targets]
        rows_x, rows_t = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise IngestionError(
                    f"expected {len(header)} fields, found {len(row)}", row=line_no
                )
            vals = {}
            for j in f_idx + t_idx:
                try:
                    v = float(row[j])
                except ValueError:
                    raise IngestionError(
                        f"cannot parse {row[j]!r} as a number",
                        row=line_no,
                        column=header[j],
                    ) from None
                if not math.isfinite(v):
                    raise DataError(
                        f"non-finite value {row[j]!r} at row {line_no}, column {header[j]!r}"
                    )
                vals[j] = v
            rows_x.append([vals[j] for j in f_idx])
            rows_t.append([vals[j] for j in t_idx])
    if not rows_x:
        raise EmptyDataError(f"{path} has a header but no data rows")
    X = np.array(rows_x, dtype=np.float64)
    T = np.array(rows_t, dtype=np.float64)
    ids = np.arange(len(X))
    if schema.task == "classification":
        if T.shape[1] != 1:
            raise ConfigurationError("classification needs exactly one target column")
        labels = T[:, 0]
        if not np.all(labels == np.round(labels)) or labels.min() < 0:
            raise DataError("class labels must be nonnegative integers")
        k = schema.num_classes or int(labels.max()) + 1
        return Dataset(X, labels.astype(np.int64), ids, k)
    return Dataset(X, T, ids)


def _standardize(A, params=None):
    if params is None:
        mean = A.mean(axis=0)
        scale = A.std(axis=0)
    else:
        mean, scale = params
    const = scale <= 1e-12 * np.maximum(1.0, np.abs(mean))
    safe = np.where(const, 1.0, scale)
    out = (A - mean) / safe
    out[:, const] = 0.0
    return out, mean, np.where(const, 0.0, scale)


def normalize(dataset):
    """Standardize features (and regression targets) to mean 0, variance 1.

    Uses the population variance. Constant columns map to zero.
    """
    if len(dataset) < 2:
        raise InsufficientDataError("normalization needs at least two rows")
    X, fm, fs = _standardize(dataset.inputs)
    t_mean = t_scale = None
    targets = dataset.targets
    if not dataset.is_classification:
        targets, t_mean, t_scale = _standardize(dataset.targets)
    out = Dataset(X, targets, dataset.ids, dataset.num_classes)
    return out, NormalizationParams(fm, fs, t_mean, t_scale)


def apply_normalization(dataset, params):
    """Standardize another dataset (e.g. a test split) with fitted parameters."""
    X, _, _ = _standardize(dataset.inputs, (params.feature_mean, params.feature_scale))
    targets = dataset.targets
    if params.target_mean is not None and not dataset.is_classification:
        targets, _, _ = _standardize(targets, (params.target_mean, params.target_scale))
    return Dataset(X, targets, dataset.ids, dataset.num_classes)


def corrupt_labels(dataset, fraction, seed):
    """Replace ``round(fraction * N)`` labels with a different random class.

    Rows are drawn uniformly without replacement; each new label is uniform
    over the other classes.
    """
    if not dataset.is_classification:
        raise UnsupportedTaskError("label corruption needs a classification dataset")
    if not 0.0 <= fraction <= 1.0:
        raise ConfigurationError("fraction must lie in [0, 1]")
    k_classes = dataset.num_classes
    if k_classes < 2 and fraction > 0:
        raise UnsupportedTaskError("label corruption needs at least two classes")
    n = len(dataset)
    count = int(math.floor(fraction * n + 0.5))
    rng = np.random.default_rng(seed)
    rows = np.sort(rng.choice(n, size=count, replace=False))
    labels = dataset.targets.copy()
    shift = rng.integers(1, max(k_classes, 2), size=count)
    original = {int(dataset.ids[r]): int(labels[r]) for r in rows}
    labels[rows] = (labels[rows] + shift) % k_classes
    record = CorruptionRecord(
        frozenset(int(dataset.ids[r]) for r in rows), original, seed, fraction
    )
    return dataset.with_targets(labels), record


def restore_labels(dataset, record):
    labels = dataset.targets.copy()
    for i, lab in record.original_labels.items():
        labels[dataset.positions([i])[0]] = lab
    return dataset.with_targets(labels)


def remove_examples(dataset, ids):
    """Drop rows by id, keeping the remaining ids and their order."""
    drop = set(int(i) for i in ids)
    dataset.positions(drop)  # raises on unknown ids
    keep = np.array([k for k, i in enumerate(dataset.ids) if int(i) not in drop], dtype=np.int64)
    return dataset.take(keep)


def subsample(dataset, fraction, seed):
    """Seeded uniform subsample without replacement, original order kept."""
    if not 0.0 < fraction <= 1.0:
        raise ConfigurationError("fraction must lie in (0, 1]")
    n = len(dataset)
    count = max(1, int(math.floor(fraction * n + 0.5)))
    rng = np.random.default_rng(seed)
    return dataset.take(np.sort(rng.choice(n, size=count, replace=False)))


def split(dataset, n_first):
    """First ``n_first`` rows and the rest; ids are kept."""
    return dataset.take(np.arange(n_first)), dataset.take(np.arange(n_first, len(dataset)))


def synth_classification(n, p, classes, seed, separation=3.0, clusters_per_class=1, noise=1.0):
    """Gaussian clusters per class with random, well separated centers.

    Center coordinates have standard deviation ``separation / sqrt(p)`` so
    the typical distance between two centers is about
    ``separation * sqrt(2)`` regardless of dimension.
    """
    if n < 1 or p < 1 or classes < 1 or clusters_per_class < 1:
        raise ConfigurationError("n, p, classes and clusters_per_class must be >= 1")
    rng = np.random.default_rng(seed)
    centers = rng.normal(scale=separation / math.sqrt(p), size=(classes, clusters_per_class, p))
    labels = rng.permutation(np.arange(n) % classes)
    cluster = rng.integers(clusters_per_class, size=n)
    X = centers[labels, cluster] + noise * rng.normal(size=(n, p))
    return Dataset(X, labels, np.arange(n), classes)


def synth_regression(n, p, seed, noise=0.1, n_outputs=1):
    """Linear-Gaussian regression data ``t = x W + noise``."""
    if n < 1 or p < 1 or n_outputs < 1:
        raise ConfigurationError("n, p and n_outputs must be >= 1")
    rng = np.random.default_rng(seed)
    W = rng.normal(scale=1.0 / math.sqrt(p), size=(p, n_outputs))
    X = rng.normal(size=(n, p))
    T = X @ W + noise * rng.normal(size=(n, n_outputs))
    return Dataset(X, T, np.arange(n))
