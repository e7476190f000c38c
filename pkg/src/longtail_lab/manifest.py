"""Labeled feature-vector manifests: JSONL IO, Pareto subsetting, synthetic blobs."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import jsonio
from .distribution import ClassDistribution, compute_distribution, distribution_from_counts, pareto_targets

SPLITS = ("train", "val", "test")
TASK_KINDS = ("single", "multi")


class ManifestFormatError(ValueError):
    """A manifest file whose records violate its own header."""


@dataclass
class Manifest:
    """A split-tagged collection of feature vectors with single- or multi-labels.

    Columnar storage: ``labels`` is (n,) int for single-label or (n, K) {0,1}
    for multi-label. Splits partition the records.
    """

    ids: tuple[str, ...]
    features: np.ndarray
    labels: np.ndarray
    splits: np.ndarray
    num_classes: int
    feature_dim: int
    task_kind: str

    def __post_init__(self):
        if self.task_kind not in TASK_KINDS:
            raise ValueError(f"task_kind must be one of {TASK_KINDS}")
        n = len(self.ids)
        if n == 0:
            raise ValueError("manifest has no records")
        self.features = np.asarray(self.features, dtype=np.float64)
        self.splits = np.asarray(self.splits, dtype="U8")
        if self.features.shape != (n, self.feature_dim):
            raise ValueError(f"features must have shape ({n}, {self.feature_dim})")
        if not np.isfinite(self.features).all():
            raise ValueError("features must be finite")
        if not np.isin(self.splits, SPLITS).all():
            raise ValueError(f"splits must be one of {SPLITS}")
        if self.task_kind == "single":
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (n,):
                raise ValueError("single-label manifest needs one class index per record")
            if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
                raise ValueError(f"labels must lie in [0, {self.num_classes})")
        else:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (n, self.num_classes):
                raise ValueError(f"multi-label manifest needs (n, {self.num_classes}) label matrix")
            if not np.isin(self.labels, (0, 1)).all():
                raise ValueError("multi-label entries must be 0 or 1")

    def __len__(self) -> int:
        return len(self.ids)

    def split_indices(self, split: str) -> np.ndarray:
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        return np.flatnonzero(self.splits == split)

    def subset(self, indices) -> "Manifest":
        idx = np.asarray(indices, dtype=np.int64)
        return Manifest(
            ids=tuple(self.ids[i] for i in idx),
            features=self.features[idx].copy(),
            labels=self.labels[idx].copy(),
            splits=self.splits[idx].copy(),
            num_classes=self.num_classes,
            feature_dim=self.feature_dim,
            task_kind=self.task_kind,
        )

    def train_distribution(self) -> ClassDistribution:
        """Class counts over the train split (positives per label when multi-label)."""
        idx = self.split_indices("train")
        if idx.size == 0:
            raise ValueError("empty dataset")
        if self.task_kind == "single":
            return compute_distribution(self.labels[idx], self.num_classes)
        return distribution_from_counts(self.labels[idx].sum(axis=0))


def label_cardinality(manifest: Manifest) -> float:
    """Mean number of positive labels per record (multi-label only)."""
    if manifest.task_kind != "multi":
        raise ValueError("label cardinality is defined for multi-label manifests")
    return float(manifest.labels.sum(axis=1).mean())


def subsample_longtail(manifest: Manifest, targets, seed: int) -> Manifest:
    """Cut the train split down to exactly ``targets[c]`` records per class.

    Records are drawn uniformly without replacement, one class at a time in
    rank order, from a generator seeded with ``seed``; val/test are untouched.
    """
    if manifest.task_kind != "single":
        raise ValueError("Pareto subsetting defined for single-label only")
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (manifest.num_classes,):
        raise ValueError(f"targets must have length {manifest.num_classes}")
    if (targets < 0).any():
        raise ValueError("targets must be non-negative")
    train_idx = manifest.split_indices("train")
    if train_idx.size == 0:
        raise ValueError("empty dataset")
    train_labels = manifest.labels[train_idx]
    dist = compute_distribution(train_labels, manifest.num_classes)
    rng = np.random.default_rng(seed)
    kept = []
    for c in dist.rank_order:
        pool = train_idx[train_labels == c]
        want = int(targets[c])
        if pool.size < want:
            raise ValueError(
                f"class {int(c)} has {pool.size} train records, {want} requested "
                f"(short {want - pool.size})"
            )
        chosen = rng.choice(pool.size, size=want, replace=False)
        kept.append(pool[np.sort(chosen)])
    other = np.flatnonzero(manifest.splits != "train")
    selected = np.sort(np.concatenate(kept + [other]))
    return manifest.subset(selected)


def synth_gaussian(
    num_classes: int,
    feature_dim: int,
    n0: int,
    ratio: float,
    class_separation: float = 3.0,
    seed: int = 0,
    val_per_class: int = 100,
    test_per_class: int = 100,
) -> Manifest:
    """Gaussian-blob dataset with a Pareto long-tailed train split.

    Class means sit evenly spaced on a radius-``class_separation`` circle in
    the first two feature coordinates, with unit isotropic noise in all
    dimensions. Train counts follow pareto_targets(n0, K, ratio); val and test
    are balanced at the given per-class counts.
    """
    if num_classes < 2:
        raise ValueError("need at least two classes")
    if feature_dim < 2:
        raise ValueError("need at least two feature dimensions")
    if class_separation < 0:
        raise ValueError("class_separation must be non-negative")
    if val_per_class < 1 or test_per_class < 1:
        raise ValueError("val/test per-class counts must be >= 1")
    targets = pareto_targets(n0, num_classes, ratio)
    means = np.zeros((num_classes, feature_dim))
    angles = 2.0 * math.pi * np.arange(num_classes) / num_classes
    means[:, 0] = class_separation * np.cos(angles)
    means[:, 1] = class_separation * np.sin(angles)

    rng = np.random.default_rng(seed)
    ids: list[str] = []
    rows: list[np.ndarray] = []
    labels: list[int] = []
    splits: list[str] = []
    per_split = (("train", targets), ("val", [val_per_class] * num_classes),
                 ("test", [test_per_class] * num_classes))
    for split, counts in per_split:
        for c in range(num_classes):
            n = int(counts[c])
            rows.append(means[c] + rng.standard_normal((n, feature_dim)))
            labels.extend([c] * n)
            splits.extend([split] * n)
            ids.extend(f"{split}-{c}-{i}" for i in range(n))
    return Manifest(
        ids=tuple(ids),
        features=np.concatenate(rows, axis=0),
        labels=np.asarray(labels, dtype=np.int64),
        splits=np.asarray(splits),
        num_classes=num_classes,
        feature_dim=feature_dim,
        task_kind="single",
    )


def save_manifest(manifest: Manifest, path) -> None:
    """Write JSON Lines: a header line, then one record per line."""
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "num_classes": manifest.num_classes,
            "feature_dim": manifest.feature_dim,
            "task": manifest.task_kind,
        }
        fh.write(jsonio.dumps(header) + "\n")
        for i, rid in enumerate(manifest.ids):
            record = {"id": rid, "features": manifest.features[i]}
            if manifest.task_kind == "single":
                record["label"] = int(manifest.labels[i])
            else:
                record["labels"] = [int(v) for v in manifest.labels[i]]
            record["split"] = str(manifest.splits[i])
            fh.write(jsonio.dumps(record) + "\n")


_RECORD_KEYS_SINGLE = {"id", "features", "label", "split"}
_RECORD_KEYS_MULTI = {"id", "features", "labels", "split"}


def load_manifest(path) -> Manifest:
    """Read a JSONL manifest, rejecting records that violate the header."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ManifestFormatError("manifest file is empty")
    header = _parse_line(lines[0], 1)
    if set(header) != {"num_classes", "feature_dim", "task"}:
        raise ManifestFormatError("header must carry exactly num_classes, feature_dim, task")
    k, d, task = header["num_classes"], header["feature_dim"], header["task"]
    if not isinstance(k, int) or not isinstance(d, int) or task not in TASK_KINDS:
        raise ManifestFormatError("malformed header values")
    expected_keys = _RECORD_KEYS_SINGLE if task == "single" else _RECORD_KEYS_MULTI

    ids, features, labels, splits = [], [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        record = _parse_line(line, lineno)
        if set(record) != expected_keys:
            raise ManifestFormatError(f"line {lineno}: record keys must be {sorted(expected_keys)}")
        if not isinstance(record["id"], str):
            raise ManifestFormatError(f"line {lineno}: id must be a string")
        feats = record["features"]
        if (not isinstance(feats, list) or len(feats) != d
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in feats)):
            raise ManifestFormatError(f"line {lineno}: features must be {d} numbers")
        if task == "single":
            label = record["label"]
            if not isinstance(label, int) or isinstance(label, bool) or not 0 <= label < k:
                raise ManifestFormatError(f"line {lineno}: label must be an int in [0, {k})")
            labels.append(label)
        else:
            lab = record["labels"]
            if not isinstance(lab, list) or len(lab) != k or any(v not in (0, 1) for v in lab):
                raise ManifestFormatError(f"line {lineno}: labels must be {k} binary values")
            labels.append(lab)
        if record["split"] not in SPLITS:
            raise ManifestFormatError(f"line {lineno}: split must be one of {SPLITS}")
        ids.append(record["id"])
        features.append(feats)
        splits.append(record["split"])
    if not ids:
        raise ManifestFormatError("manifest has no records")
    try:
        return Manifest(
            ids=tuple(ids),
            features=np.asarray(features, dtype=np.float64),
            labels=np.asarray(labels, dtype=np.int64),
            splits=np.asarray(splits),
            num_classes=k,
            feature_dim=d,
            task_kind=task,
        )
    except ValueError as exc:
        raise ManifestFormatError(str(exc)) from exc


def _parse_line(line: str, lineno: int) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ManifestFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
    if not isinstance(obj, dict):
        raise ManifestFormatError(f"line {lineno}: expected a JSON object")
    return obj
