import numpy as np
import pytest

from longtail_lab import Manifest


def blob_manifest(train_counts, feature_dim=4, val_per_class=5, test_per_class=5,
                  separation=4.0, seed=0):
    """Axis-aligned Gaussian blobs with explicit per-class train counts."""
    k = len(train_counts)
    assert k <= feature_dim, "axis-aligned means need K <= d"
    rng = np.random.default_rng(seed)
    means = separation * np.eye(feature_dim)[:k]
    ids, rows, labels, splits = [], [], [], []
    for split, counts in (("train", train_counts),
                          ("val", [val_per_class] * k),
                          ("test", [test_per_class] * k)):
        for c in range(k):
            n = int(counts[c])
            rows.append(means[c] + rng.standard_normal((n, feature_dim)))
            labels.extend([c] * n)
            splits.extend([split] * n)
            ids.extend(f"{split}-{c}-{i}" for i in range(n))
    return Manifest(
        ids=tuple(ids), features=np.concatenate(rows), labels=np.asarray(labels),
        splits=np.asarray(splits), num_classes=k, feature_dim=feature_dim,
        task_kind="single",
    )


def multilabel_manifest(n=40, num_classes=3, feature_dim=4, seed=0):
    rng = np.random.default_rng(seed)
    features = rng.standard_normal((n, feature_dim))
    labels = (rng.random((n, num_classes)) < np.array([0.7, 0.4, 0.15])).astype(np.int64)
    labels[0] = [1, 1, 1]  # ensure every label has a positive
    splits = np.array(["train"] * (n - 20) + ["val"] * 10 + ["test"] * 10)
    return Manifest(
        ids=tuple(f"r{i}" for i in range(n)), features=features, labels=labels,
        splits=splits, num_classes=num_classes, feature_dim=feature_dim,
        task_kind="multi",
    )


@pytest.fixture
def tiny_manifest():
    return blob_manifest([20, 10, 5])
