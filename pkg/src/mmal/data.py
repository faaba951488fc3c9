"""Two-modality datasets: synthetic generation and CSV ingestion.

A dataset holds per-sample feature vectors for two modalities plus integer
class labels, and a fixed train/test split. Synthetic data places each class
around a random unit-vector mean scaled by a per-modality signal-to-noise
ratio; a configurable fraction of samples gets its modality-1 class mean
doubled, which plants per-sample dominance structure for the balance
experiments.
"""

from __future__ import annotations

import configparser
import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, LoadError

TRAIN_FRACTION = 0.8


@dataclass(frozen=True)
class MultimodalSample:
    """One sample: a feature vector per modality and its class label."""

    x_m1: np.ndarray
    x_m2: np.ndarray
    label: int


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for synthetic two-modality generation.

    ``snr_m1`` / ``snr_m2`` set the class-mean norm per modality in units of
    the (unit) noise std. ``dominant_fraction`` of all samples get their
    modality-1 class mean doubled.
    """

    n: int
    num_classes: int
    dim_m1: int
    dim_m2: int
    snr_m1: float = 1.0
    snr_m2: float = 1.0
    dominant_fraction: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if self.n < self.num_classes:
            raise ConfigError(f"n={self.n} must be >= num_classes={self.num_classes}")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.dim_m1 < 1 or self.dim_m2 < 1:
            raise ConfigError("modality dims must be positive")
        if self.snr_m1 < 0 or self.snr_m2 < 0:
            raise ConfigError("snr values must be nonnegative")
        if not 0.0 <= self.dominant_fraction <= 1.0:
            raise ConfigError(
                f"dominant_fraction={self.dominant_fraction} outside [0, 1]"
            )


@dataclass
class Dataset:
    """Feature arrays, labels and a disjoint train/test split.

    ``x_m1`` is (n, dim_m1), ``x_m2`` is (n, dim_m2), ``labels`` is (n,).
    """

    x_m1: np.ndarray
    x_m2: np.ndarray
    labels: np.ndarray
    num_classes: int
    train_indices: np.ndarray = field(default_factory=lambda: np.array([], dtype=np.int64))
    test_indices: np.ndarray = field(default_factory=lambda: np.array([], dtype=np.int64))

    def __post_init__(self) -> None:
        self.x_m1 = np.asarray(self.x_m1, dtype=np.float64)
        self.x_m2 = np.asarray(self.x_m2, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.train_indices = np.asarray(self.train_indices, dtype=np.int64)
        self.test_indices = np.asarray(self.test_indices, dtype=np.int64)
        self._check()

    def _check(self) -> None:
        n = len(self.labels)
        if self.x_m1.shape[0] != n or self.x_m2.shape[0] != n:
            raise ConfigError("feature arrays and labels disagree on sample count")
        if not np.all(np.isfinite(self.x_m1)) or not np.all(np.isfinite(self.x_m2)):
            raise ConfigError("features contain non-finite entries")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ConfigError("labels outside [0, num_classes)")
        overlap = np.intersect1d(self.train_indices, self.test_indices)
        if overlap.size:
            raise ConfigError(f"train/test overlap at indices {overlap[:5].tolist()}")
        for name, idx in (("train", self.train_indices), ("test", self.test_indices)):
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise ConfigError(f"{name} indices out of range")

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def modality_dims(self) -> tuple[int, int]:
        return self.x_m1.shape[1], self.x_m2.shape[1]

    def sample(self, i: int) -> MultimodalSample:
        return MultimodalSample(self.x_m1[i], self.x_m2[i], int(self.labels[i]))


def _stratified_split(labels: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Per-class 80/20 split; train gets floor(0.8 * class count)."""
    train: list[np.ndarray] = []
    test: list[np.ndarray] = []
    for k in np.unique(labels):
        members = np.flatnonzero(labels == k)
        members = rng.permutation(members)
        cut = int(math.floor(TRAIN_FRACTION * len(members)))
        train.append(members[:cut])
        test.append(members[cut:])
    return (
        np.sort(np.concatenate(train)).astype(np.int64),
        np.sort(np.concatenate(test)).astype(np.int64),
    )


def generate_synthetic(cfg: SynthConfig) -> Dataset:
    """Generate a seeded synthetic dataset; same config, same bytes.

    Per class k and modality m, features are N(mu_mk, I) with
    ||mu_mk|| = snr_m. For a random ``dominant_fraction`` subset of samples
    the modality-1 mean is doubled. Class counts differ by at most one;
    split is stratified 80/20.
    """
    cfg.validate()
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed & (2**64 - 1)))
    k, n = cfg.num_classes, cfg.n

    # Class means: random unit directions scaled to the per-modality SNR.
    def class_means(dim: int, snr: float) -> np.ndarray:
        g = rng.normal(size=(k, dim))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        return snr * g

    means_m1 = class_means(cfg.dim_m1, cfg.snr_m1)
    means_m2 = class_means(cfg.dim_m2, cfg.snr_m2)

    base = n // k
    labels = np.repeat(np.arange(k, dtype=np.int64), base)
    labels = np.concatenate([labels, np.arange(n - base * k, dtype=np.int64)])
    rng.shuffle(labels)

    boosted = np.zeros(n, dtype=bool)
    n_boost = int(round(cfg.dominant_fraction * n))
    boosted[rng.choice(n, size=n_boost, replace=False)] = True

    scale_m1 = np.where(boosted, 2.0, 1.0)[:, None]
    x_m1 = scale_m1 * means_m1[labels] + rng.normal(size=(n, cfg.dim_m1))
    x_m2 = means_m2[labels] + rng.normal(size=(n, cfg.dim_m2))

    train_idx, test_idx = _stratified_split(labels, rng)
    return Dataset(x_m1, x_m2, labels, k, train_idx, test_idx)


@dataclass(frozen=True)
class FeatureSchema:
    """Column spec for a bare feature CSV: label column then the two blocks."""

    num_classes: int
    dim_m1: int
    dim_m2: int
    split_seed: int = 0


def _header(dim_m1: int, dim_m2: int) -> list[str]:
    return (
        ["label"]
        + [f"m1_{j}" for j in range(dim_m1)]
        + [f"m2_{j}" for j in range(dim_m2)]
    )


def load_features(path: str | Path, schema: FeatureSchema) -> Dataset:
    """Parse a feature CSV into a Dataset, preserving row order.

    Bare CSVs carry no split information, so a deterministic stratified
    80/20 split seeded by ``schema.split_seed`` is applied. Use
    :func:`load_dataset` to restore a dump with its exact split.
    """
    path = Path(path)
    if not path.exists():
        raise LoadError(f"no such file: {path}")
    expected = 1 + schema.dim_m1 + schema.dim_m2
    x1_rows: list[list[float]] = []
    x2_rows: list[list[float]] = []
    labels: list[int] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1:
                if row != _header(schema.dim_m1, schema.dim_m2):
                    raise LoadError(f"row 1: unexpected header {row[:4]}...")
                continue
            if not row:
                continue
            if len(row) != expected:
                raise LoadError(
                    f"row {lineno}: expected {expected} columns, got {len(row)}"
                )
            try:
                label = int(row[0])
                values = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise LoadError(f"row {lineno}: {exc}") from exc
            if not 0 <= label < schema.num_classes:
                raise LoadError(f"row {lineno}: label {label} outside [0, {schema.num_classes})")
            if not all(math.isfinite(v) for v in values):
                raise LoadError(f"row {lineno}: non-finite feature value")
            labels.append(label)
            x1_rows.append(values[: schema.dim_m1])
            x2_rows.append(values[schema.dim_m1 :])
    if not labels:
        raise LoadError("no samples")
    labels_arr = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(np.random.SeedSequence(schema.split_seed & (2**64 - 1)))
    train_idx, test_idx = _stratified_split(labels_arr, rng)
    return Dataset(
        np.asarray(x1_rows), np.asarray(x2_rows), labels_arr,
        schema.num_classes, train_idx, test_idx,
    )


def save_dataset(dataset: Dataset, csv_path: str | Path) -> Path:
    """Write the feature CSV plus a ``.meta`` sidecar; returns the sidecar path.

    Floats are written with ``repr`` so a reload is bit-exact.
    """
    csv_path = Path(csv_path)
    d1, d2 = dataset.modality_dims
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_header(d1, d2))
        for i in range(dataset.n):
            writer.writerow(
                [int(dataset.labels[i])]
                + [repr(float(v)) for v in dataset.x_m1[i]]
                + [repr(float(v)) for v in dataset.x_m2[i]]
            )
    meta = configparser.ConfigParser()
    meta["dataset"] = {
        "n": str(dataset.n),
        "num_classes": str(dataset.num_classes),
        "dim_m1": str(d1),
        "dim_m2": str(d2),
        "train_indices": " ".join(map(str, dataset.train_indices.tolist())),
        "test_indices": " ".join(map(str, dataset.test_indices.tolist())),
    }
    meta_path = csv_path.with_suffix(".meta")
    with open(meta_path, "w") as fh:
        meta.write(fh)
    return meta_path


def load_dataset(csv_path: str | Path) -> Dataset:
    """Reload a :func:`save_dataset` dump, including its exact split."""
    csv_path = Path(csv_path)
    meta_path = csv_path.with_suffix(".meta")
    if not meta_path.exists():
        raise LoadError(f"missing sidecar metadata: {meta_path}")
    meta = configparser.ConfigParser()
    meta.read(meta_path)
    try:
        section = meta["dataset"]
        num_classes = int(section["num_classes"])
        dim_m1 = int(section["dim_m1"])
        dim_m2 = int(section["dim_m2"])
        train_idx = np.array(
            [int(v) for v in section["train_indices"].split()], dtype=np.int64
        )
        test_idx = np.array(
            [int(v) for v in section["test_indices"].split()], dtype=np.int64
        )
    except (KeyError, ValueError) as exc:
        raise LoadError(f"bad sidecar {meta_path}: {exc}") from exc
    base = load_features(csv_path, FeatureSchema(num_classes, dim_m1, dim_m2))
    return Dataset(
        base.x_m1, base.x_m2, base.labels, num_classes, train_idx, test_idx
    )
