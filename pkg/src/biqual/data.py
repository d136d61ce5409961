"""Tabular dataset containers, CSV ingestion, splitting and toy-data generation."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Dataset",
    "BiqualityDataset",
    "SplitSpec",
    "DatasetError",
    "SchemaError",
    "ParseError",
    "DegenerateDatasetError",
    "StratificationError",
    "load_csv",
    "save_csv",
    "dataset_metadata",
    "write_metadata",
    "stratified_split",
    "shuffle_rows",
    "make_two_moons",
    "calibrate_trusted_ratio",
    "DEFAULT_RATIO_GRID",
]


class DatasetError(ValueError):
    """Base class for ingestion and splitting failures."""


class SchemaError(DatasetError):
    """A required column is missing or the header is malformed."""


class ParseError(DatasetError):
    """A cell could not be read as a finite number."""


class DegenerateDatasetError(DatasetError):
    """Fewer than two distinct classes."""


class StratificationError(DatasetError):
    """A class is too small to split in a stratified fashion."""


@dataclass(frozen=True)
class Dataset:
    """Immutable tabular classification dataset.

    ``features`` is an (n_samples, n_features) float matrix, ``labels`` holds
    contiguous integer class ids in [0, n_classes).  ``label_names`` maps each
    class id back to the original label text (first-appearance encoding).
    """

    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...]
    n_classes: int
    label_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        features = np.ascontiguousarray(self.features, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if features.ndim != 2:
            raise DatasetError("features must be a 2-D matrix")
        if labels.ndim != 1 or labels.shape[0] != features.shape[0]:
            raise DatasetError("labels must align with feature rows")
        if not np.all(np.isfinite(features)):
            raise DatasetError("features contain NaN or Inf")
        if self.n_classes < 2:
            raise DegenerateDatasetError("a dataset needs at least 2 classes")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise DatasetError("labels must lie in [0, n_classes)")
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "label_names", tuple(self.label_names))

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def subset(self, indices: np.ndarray) -> "Dataset":
        """New dataset holding the given rows, order preserved."""
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.features[idx],
            self.labels[idx],
            self.feature_names,
            self.n_classes,
            self.label_names,
        )

    def with_labels(self, labels: np.ndarray) -> "Dataset":
        """Same rows, new label vector (used by corruption injectors)."""
        return Dataset(self.features, labels, self.feature_names, self.n_classes, self.label_names)


@dataclass(frozen=True)
class BiqualityDataset:
    """A trusted and an untrusted partition sharing one feature schema."""

    trusted: Dataset
    untrusted: Dataset

    def __post_init__(self) -> None:
        if self.trusted.n_classes != self.untrusted.n_classes:
            raise DatasetError("partitions disagree on the number of classes")
        if self.trusted.n_features != self.untrusted.n_features:
            raise DatasetError("partitions disagree on the feature schema")
        if self.trusted.n_samples == 0 or self.untrusted.n_samples == 0:
            raise DatasetError("both partitions must be non-empty")

    @property
    def n_classes(self) -> int:
        return self.trusted.n_classes

    def pooled(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Stacked (features, labels, source) with source 1 = trusted."""
        features = np.vstack([self.trusted.features, self.untrusted.features])
        labels = np.concatenate([self.trusted.labels, self.untrusted.labels])
        source = np.concatenate(
            [np.ones(self.trusted.n_samples, dtype=np.int64),
             np.zeros(self.untrusted.n_samples, dtype=np.int64)]
        )
        return features, labels, source


@dataclass(frozen=True)
class SplitSpec:
    """Protocol parameters for the train/test and trusted/untrusted splits."""

    test_fraction: float = 0.2
    trusted_fraction: float = 0.05
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("test_fraction", "trusted_fraction"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise DatasetError(f"{name} must lie strictly inside (0, 1)")


def load_csv(path: str | Path, label_column: str) -> Dataset:
    """Read a numeric CSV with a header row into a Dataset.

    Labels are re-encoded to contiguous integers by first appearance; the
    original label text is kept in ``label_names``.  Row numbers in error
    messages count file lines (the header is line 1).
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        if label_column not in header:
            raise SchemaError(f"{path}: missing label column {label_column!r}")
        label_idx = header.index(label_column)
        feature_names = tuple(name for i, name in enumerate(header) if i != label_idx)

        rows: list[list[float]] = []
        raw_labels: list[str] = []
        for line_no, record in enumerate(reader, start=2):
            if len(record) != len(header):
                raise ParseError(f"{path}: row {line_no} has {len(record)} cells, expected {len(header)}")
            values = []
            for i, cell in enumerate(record):
                if i == label_idx:
                    continue
                try:
                    value = float(cell)
                except ValueError:
                    raise ParseError(
                        f"{path}: row {line_no}, column {header[i]!r}: non-numeric cell {cell!r}"
                    ) from None
                if not math.isfinite(value):
                    raise ParseError(f"{path}: row {line_no}, column {header[i]!r}: non-finite cell {cell!r}")
                values.append(value)
            rows.append(values)
            raw_labels.append(record[label_idx])

    if not rows:
        raise DatasetError(f"{path}: no data rows")
    encoding: dict[str, int] = {}
    labels = np.empty(len(raw_labels), dtype=np.int64)
    for i, raw in enumerate(raw_labels):
        labels[i] = encoding.setdefault(raw, len(encoding))
    if len(encoding) < 2:
        raise DegenerateDatasetError(f"{path}: only one distinct label {raw_labels[0]!r}")
    return Dataset(
        np.asarray(rows, dtype=np.float64),
        labels,
        feature_names,
        n_classes=len(encoding),
        label_names=tuple(encoding),
    )


def save_csv(dataset: Dataset, path: str | Path, label_column: str = "label") -> None:
    """Write a Dataset back to the ingestion CSV format (round-trip safe)."""
    path = Path(path)
    names = dataset.label_names or tuple(str(k) for k in range(dataset.n_classes))
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(list(dataset.feature_names) + [label_column])
        for row, label in zip(dataset.features, dataset.labels):
            writer.writerow([repr(float(v)) for v in row] + [names[label]])


def dataset_metadata(dataset: Dataset) -> dict:
    names = dataset.label_names or tuple(str(k) for k in range(dataset.n_classes))
    return {
        "n_samples": int(dataset.n_samples),
        "n_features": int(dataset.n_features),
        "n_classes": int(dataset.n_classes),
        "feature_names": list(dataset.feature_names),
        "label_encoding": {name: k for k, name in enumerate(names)},
        "encoding_order": "first-appearance",
        "class_counts": [int(c) for c in dataset.class_counts()],
    }


def write_metadata(dataset: Dataset, path: str | Path) -> None:
    """Persist the JSON metadata sidecar next to an ingested CSV."""
    Path(path).write_text(json.dumps(dataset_metadata(dataset), indent=2) + "\n", encoding="utf-8")


def _stratified_indices(labels: np.ndarray, n_classes: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    first: list[np.ndarray] = []
    second: list[np.ndarray] = []
    for k in range(n_classes):
        idx = np.flatnonzero(labels == k)
        if idx.size < 2:
            raise StratificationError(f"class {k} has {idx.size} sample(s); need at least 2")
        perm = rng.permutation(idx.size)
        take = int(round(fraction * idx.size))
        take = min(max(take, 1), idx.size - 1)
        first.append(idx[perm[:take]])
        second.append(idx[perm[take:]])
    return np.sort(np.concatenate(first)), np.sort(np.concatenate(second))


def stratified_split(dataset: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Split into two parts with per-class proportions preserved.

    The first part receives round(fraction * class_count) samples of every
    class (clamped so neither part loses a class entirely).  Row order is
    preserved within each part; the same seed gives the same partition.
    """
    if not 0.0 < fraction < 1.0:
        raise DatasetError("fraction must lie strictly inside (0, 1)")
    first_idx, second_idx = _stratified_indices(dataset.labels, dataset.n_classes, fraction, seed)
    return dataset.subset(first_idx), dataset.subset(second_idx)


def shuffle_rows(dataset: Dataset, seed: int) -> Dataset:
    """Row-permuted copy of the dataset."""
    rng = np.random.default_rng(seed)
    return dataset.subset(rng.permutation(dataset.n_samples))


def make_two_moons(n: int, noise_sd: float, seed: int) -> Dataset:
    """Two interleaved half-circle classes with Gaussian jitter.

    Class 0 lies on the upper unit half-circle centred at the origin, class 1
    on the lower half-circle shifted to interleave with it.  Class counts
    differ by at most one.
    """
    if n < 2:
        raise DatasetError("need at least 2 samples")
    if noise_sd < 0:
        raise DatasetError("noise_sd must be nonnegative")
    n0 = (n + 1) // 2
    n1 = n - n0
    t0 = np.linspace(0.0, np.pi, n0)
    t1 = np.linspace(0.0, np.pi, max(n1, 1))[:n1]
    x0 = np.column_stack([np.cos(t0), np.sin(t0)])
    x1 = np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)])
    features = np.vstack([x0, x1])
    labels = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    rng = np.random.default_rng(seed)
    if noise_sd > 0:
        features = features + rng.normal(0.0, noise_sd, size=features.shape)
    order = rng.permutation(n)
    return Dataset(features[order], labels[order], ("x0", "x1"), n_classes=2)


DEFAULT_RATIO_GRID: tuple[float, ...] = (0.005, 0.01, 0.02, 0.04, 0.08, 0.16, 0.32, 0.64, 1.0)


def calibrate_trusted_ratio(
    train: Dataset,
    p: float,
    learner_factory: Callable[[], "object"],
    grid: Sequence[float] = DEFAULT_RATIO_GRID,
    seed: int = 0,
) -> float:
    """Smallest grid fraction whose learning-curve point reaches p of full performance.

    A fixed internal 75/25 stratified split of ``train`` provides the
    validation set.  The reference score is the kappa of a learner fitted on
    the whole 75% part; the returned ratio is the smallest grid value whose
    subsampled learner reaches ``p`` times that score on the validation part.
    Falls back to the largest grid value (with a warning) if none qualifies.
    """
    from .evalstat import evaluate_kappa

    if not 0.0 < p <= 1.0:
        raise DatasetError("p must lie in (0, 1]")
    grid = tuple(grid)
    if not grid:
        raise DatasetError("grid must not be empty")
    if any(not 0.0 < g <= 1.0 for g in grid) or list(grid) != sorted(grid):
        raise DatasetError("grid must be ascending with values in (0, 1]")

    fit_part, val_part = stratified_split(train, 0.75, seed)
    full_model = learner_factory()
    full_model.fit(fit_part.features, fit_part.labels, n_classes=train.n_classes)
    full_kappa = evaluate_kappa(full_model, val_part)
    target = p * full_kappa

    for ratio in grid:
        if ratio >= 1.0:
            return 1.0
        sub, _ = stratified_split(fit_part, ratio, seed + 1)
        model = learner_factory()
        model.fit(sub.features, sub.labels, n_classes=train.n_classes)
        if evaluate_kappa(model, val_part) >= target:
            return ratio
    warnings.warn(
        f"no grid ratio reached {p:.2f} of full performance; falling back to {grid[-1]}",
        stacklevel=2,
    )
    return grid[-1]
