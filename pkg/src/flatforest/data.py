"""Dataset containers, CSV ingestion and synthetic generators."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

SPLIT_NAMES = ("train", "val", "test")


@dataclass
class Dataset:
    features: np.ndarray   # (n, F)
    labels: np.ndarray     # (n,) int for classification, float for regression
    split: str = "train"

    def __post_init__(self) -> None:
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features and labels row counts differ")
        if self.split not in SPLIT_NAMES:
            raise ValueError(f"split must be one of {SPLIT_NAMES}")

    @property
    def n(self) -> int:
        return int(self.features.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.features.shape[1])


@dataclass
class SplitDataset:
    train: Dataset
    val: Dataset
    test: Dataset

    def get(self, name: str) -> Dataset:
        if name not in SPLIT_NAMES:
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)

    @property
    def n_features(self) -> int:
        return self.train.n_features


def load_dataset(path, schema: Optional[dict] = None) -> SplitDataset:
    """Parse the `f0,...,f{F-1},label,split` CSV into typed split datasets.

    schema may carry {"task": ..., "n_classes": M} to validate labels.
    """
    task = (schema or {}).get("task", "classification")
    n_classes = (schema or {}).get("n_classes")
    rows = {name: ([], []) for name in SPLIT_NAMES}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if len(header) < 3 or header[-1] != "split" or header[-2] != "label":
            raise ValueError(f"{path}: header must end with ...,label,split")
        n_feat = len(header) - 2
        expected = [f"f{i}" for i in range(n_feat)]
        if header[:n_feat] != expected:
            raise ValueError(f"{path}: feature columns must be f0..f{n_feat - 1}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != n_feat + 2:
                raise ValueError(f"{path}: line {lineno}: expected {n_feat + 2} "
                                 f"columns, got {len(row)}")
            try:
                feats = [float(v) for v in row[:n_feat]]
            except ValueError:
                raise ValueError(f"{path}: line {lineno}: non-numeric feature value") from None
            if any(not math.isfinite(v) for v in feats):
                raise ValueError(f"{path}: line {lineno}: non-finite feature value")
            try:
                label = float(row[n_feat])
            except ValueError:
                raise ValueError(f"{path}: line {lineno}: non-numeric label") from None
            if task == "classification":
                if label != int(label) or label < 0:
                    raise ValueError(f"{path}: line {lineno}: classification labels "
                                     f"must be non-negative integers")
                if n_classes is not None and int(label) >= n_classes:
                    raise ValueError(f"{path}: line {lineno}: label out of range "
                                     f"(got {int(label)}, n_classes={n_classes})")
            split = row[n_feat + 1]
            if split not in SPLIT_NAMES:
                raise ValueError(f"{path}: line {lineno}: split must be one of "
                                 f"{SPLIT_NAMES}, got {split!r}")
            rows[split][0].append(feats)
            rows[split][1].append(label)

    def build(name: str) -> Dataset:
        feats, labels = rows[name]
        x = np.asarray(feats, dtype=np.float64).reshape(len(feats), n_feat)
        if task == "classification":
            y = np.asarray(labels, dtype=np.int64)
        else:
            y = np.asarray(labels, dtype=np.float64)
        return Dataset(features=x, labels=y, split=name)

    return SplitDataset(*(build(name) for name in SPLIT_NAMES))


def save_dataset(splits: SplitDataset, path) -> None:
    n_feat = splits.n_features
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(n_feat)] + ["label", "split"])
        for name in SPLIT_NAMES:
            ds = splits.get(name)
            for i in range(ds.n):
                label = ds.labels[i]
                label = int(label) if float(label) == int(label) else float(label)
                writer.writerow([repr(float(v)) for v in ds.features[i]] + [label, name])


def _stratified_split(features, labels, rng, fractions=(0.6, 0.2, 0.2)) -> SplitDataset:
    """Per-class shuffled split so every class appears in every split when possible."""
    idx_by_split = {name: [] for name in SPLIT_NAMES}
    for c in np.unique(labels):
        pool = rng.permutation(np.nonzero(labels == c)[0])
        n = pool.shape[0]
        n_train = int(round(fractions[0] * n))
        n_val = int(round(fractions[1] * n))
        if n >= 3:
            n_train = max(1, min(n_train, n - 2))
            n_val = max(1, min(n_val, n - n_train - 1))
        idx_by_split["train"].append(pool[:n_train])
        idx_by_split["val"].append(pool[n_train:n_train + n_val])
        idx_by_split["test"].append(pool[n_train + n_val:])

    def build(name: str) -> Dataset:
        parts = [p for p in idx_by_split[name] if p.size]
        idx = np.sort(np.concatenate(parts)) if parts else np.empty(0, dtype=np.int64)
        return Dataset(features=features[idx], labels=labels[idx], split=name)

    return SplitDataset(*(build(name) for name in SPLIT_NAMES))


def synth_dataset(kind: str, n: int, n_classes: int, n_features: int,
                  difficulty: float, seed: int,
                  minority_ratio: float = 0.1) -> SplitDataset:
    """Deterministic synthetic classification data.

    gaussian_blobs: one unit-variance Gaussian cluster per class; centroid
    separation shrinks from ~8 sigma (difficulty 0, essentially separable)
    to ~0.5 sigma (difficulty 1). binary_imbalanced: two blobs with the
    requested minority fraction for class 1.
    """
    if kind not in ("gaussian_blobs", "binary_imbalanced"):
        raise ValueError(f"unknown synthetic dataset kind {kind!r}")
    if not (0.0 <= difficulty <= 1.0):
        raise ValueError("difficulty must be in [0, 1]")
    if n_classes < 2 or n < n_classes:
        raise ValueError("need n >= n_classes >= 2")
    if kind == "binary_imbalanced":
        if n_classes != 2:
            raise ValueError("binary_imbalanced requires n_classes=2")
        if not (0.0 < minority_ratio <= 0.5):
            raise ValueError("minority_ratio must be in (0, 0.5]")
    rng = np.random.default_rng(seed)

    centroids = rng.normal(0.0, 1.0, size=(n_classes, n_features))
    dists = [np.linalg.norm(centroids[i] - centroids[j])
             for i in range(n_classes) for j in range(i + 1, n_classes)]
    d_min = max(min(dists), 1e-9)
    target_sep = 8.0 * (1.0 - difficulty) + 0.5 * difficulty
    centroids *= target_sep / d_min

    if kind == "gaussian_blobs":
        base, extra = divmod(n, n_classes)
        counts = [base + (1 if c < extra else 0) for c in range(n_classes)]
    else:
        n_minority = int(round(n * minority_ratio))
        counts = [n - n_minority, n_minority]
    labels = np.concatenate([np.full(k, c, dtype=np.int64) for c, k in enumerate(counts)])
    features = centroids[labels] + rng.normal(0.0, 1.0, size=(n, n_features))
    perm = rng.permutation(n)
    return _stratified_split(features[perm], labels[perm], rng)
