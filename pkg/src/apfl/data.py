"""Datasets, one-hot encoding, and Dirichlet label-skew partitioning.

The partitioner implements the standard per-class construction: for every
class, client shares are drawn from Dirichlet(alpha * 1_K) and the class's
samples are split accordingly. Smaller alpha gives more heterogeneous
shards.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, PartitionError
from .features import read_feature_file, read_label_file
from .linalg import as_matrix


@dataclass(frozen=True)
class LabeledDataset:
    """Feature rows plus integer class labels for one body of data."""

    features: np.ndarray  # (N, input_dim) float64
    labels: np.ndarray  # (N,) int64 in [0, num_classes)
    num_classes: int

    def __post_init__(self):
        feats = as_matrix(self.features, "features")
        labels = np.asarray(self.labels, dtype=np.int64).ravel()
        if labels.shape[0] != feats.shape[0]:
            raise DataError(
                f"{feats.shape[0]} feature rows but {labels.shape[0]} labels"
            )
        if self.num_classes < 1:
            raise DataError(f"num_classes must be >= 1, got {self.num_classes}")
        if labels.min() < 0 or labels.max() >= self.num_classes:
            raise DataError(
                f"labels must lie in [0, {self.num_classes}), "
                f"got range [{labels.min()}, {labels.max()}]"
            )
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.features[idx], self.labels[idx], self.num_classes)


@dataclass(frozen=True)
class PartitionSpec:
    """How to split one dataset across clients."""

    num_clients: int
    alpha: float
    seed: int
    min_samples_per_client: int = 2

    def __post_init__(self):
        if self.num_clients < 1:
            raise DataError(f"num_clients must be >= 1, got {self.num_clients}")
        if not self.alpha > 0:
            raise DataError(f"alpha must be > 0, got {self.alpha}")
        if self.min_samples_per_client < 0:
            raise DataError("min_samples_per_client must be >= 0")


def one_hot(labels, num_classes: int) -> np.ndarray:
    """Encode class indices as 0/1 rows summing to one."""
    lab = np.asarray(labels, dtype=np.int64).ravel()
    if lab.size < 1:
        raise DataError("labels must be non-empty")
    if num_classes < 1:
        raise DataError("num_classes must be >= 1")
    if lab.min() < 0 or lab.max() >= num_classes:
        raise DataError(f"label {lab.max()} outside [0, {num_classes})")
    out = np.zeros((lab.size, num_classes), dtype=np.float64)
    out[np.arange(lab.size), lab] = 1.0
    return out


def dirichlet_partition(
    ds: LabeledDataset, spec: PartitionSpec, max_attempts: int = 100
) -> list[np.ndarray]:
    """Split sample indices across clients with per-class Dirichlet shares.

    Deterministic in (ds, spec): the generator state advances through
    re-draws, so a given seed always yields the same accepted partition.
    Raises PartitionError when no draw gives every client at least
    ``min_samples_per_client`` samples within the retry budget.
    """
    rng = np.random.default_rng(spec.seed)
    k = spec.num_clients
    for _ in range(max_attempts):
        parts: list[list[int]] = [[] for _ in range(k)]
        for cls in range(ds.num_classes):
            idx = np.flatnonzero(ds.labels == cls)
            if idx.size == 0:
                continue
            idx = rng.permutation(idx)
            shares = rng.dirichlet(np.full(k, spec.alpha))
            cuts = (np.cumsum(shares)[:-1] * idx.size).astype(np.int64)
            for client, chunk in enumerate(np.split(idx, cuts)):
                parts[client].extend(chunk.tolist())
        if all(len(p) >= spec.min_samples_per_client for p in parts):
            return [np.sort(np.asarray(p, dtype=np.int64)) for p in parts]
    raise PartitionError(
        f"no partition with >= {spec.min_samples_per_client} samples per client "
        f"after {max_attempts} draws; try a larger alpha or fewer clients"
    )


def stratified_split_indices(
    labels: np.ndarray,
    fraction: float,
    rng: np.random.Generator,
    singletons_to_train: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-class split of positions 0..N-1 into (train, test).

    ``fraction`` is the train share; each side keeps at least one sample per
    class. Classes with a single sample either raise DataError or, with
    ``singletons_to_train``, go entirely to the train side (needed for
    heavily skewed client shards). A shard whose classes are all singletons
    would otherwise produce an empty test side; in that case the last
    sample of the largest class is moved over.
    """
    if not 0.0 < fraction < 1.0:
        raise DataError(f"fraction must be in (0, 1), got {fraction}")
    labels = np.asarray(labels, dtype=np.int64).ravel()
    train_parts: list[np.ndarray] = []
    test_parts: list[np.ndarray] = []
    for cls in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == cls))
        if idx.size < 2:
            if not singletons_to_train:
                raise DataError(
                    f"class {cls} has {idx.size} samples; need >= 2 for a stratified split"
                )
            train_parts.append(idx)
            continue
        n_train = int(round(fraction * idx.size))
        n_train = min(max(n_train, 1), idx.size - 1)
        train_parts.append(idx[:n_train])
        test_parts.append(idx[n_train:])
    train = np.sort(np.concatenate(train_parts))
    if test_parts:
        test = np.sort(np.concatenate(test_parts))
    else:
        # all-singleton shard: surrender one training sample so evaluation
        # has something to score
        counts = np.bincount(labels[train])
        donor_cls = int(np.argmax(counts))
        donor = np.flatnonzero(labels[train] == donor_cls)[-1]
        test = train[donor : donor + 1]
        train = np.delete(train, donor)
    return train, test


def split_train_test(
    ds: LabeledDataset, fraction: float, seed: int
) -> tuple[LabeledDataset, LabeledDataset]:
    """Deterministic per-class stratified split into (train, test) datasets."""
    rng = np.random.default_rng(seed)
    train_idx, test_idx = stratified_split_indices(ds.labels, fraction, rng)
    return ds.subset(train_idx), ds.subset(test_idx)


def synthetic_dataset(
    num_classes: int,
    input_dim: int,
    n_samples: int,
    separation: float = 3.0,
    noise: float = 1.0,
    seed: int = 0,
) -> LabeledDataset:
    """Gaussian class clusters with controllable geometry.

    Class means are drawn once at scale ``separation``; samples add unit
    Gaussian noise scaled by ``noise``. Class counts are balanced up to
    remainder. Rows arrive shuffled but deterministically in ``seed``.
    """
    if num_classes < 1 or input_dim < 1 or n_samples < num_classes:
        raise DataError(
            "need num_classes >= 1, input_dim >= 1 and n_samples >= num_classes"
        )
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((num_classes, input_dim)) * separation
    counts = np.full(num_classes, n_samples // num_classes, dtype=np.int64)
    counts[: n_samples % num_classes] += 1
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), counts)
    features = means[labels] + rng.standard_normal((n_samples, input_dim)) * noise
    order = rng.permutation(n_samples)
    return LabeledDataset(features[order], labels[order], num_classes)


def load_dataset_files(features_path, labels_path) -> LabeledDataset:
    """Assemble a dataset from the binary feature and label file pair."""
    features = read_feature_file(features_path)
    labels, num_classes = read_label_file(labels_path)
    if labels.shape[0] != features.shape[0]:
        raise DataError(
            f"feature file has {features.shape[0]} rows but label file has {labels.shape[0]}"
        )
    return LabeledDataset(features, labels, num_classes)


def label_histogram(ds: LabeledDataset, parts: list[np.ndarray]) -> np.ndarray:
    """Per-client class counts, shape (num_clients, num_classes)."""
    hist = np.zeros((len(parts), ds.num_classes), dtype=np.int64)
    for k, idx in enumerate(parts):
        hist[k] = np.bincount(ds.labels[idx], minlength=ds.num_classes)
    return hist


def label_entropy(hist_row: np.ndarray) -> float:
    """Shannon entropy (nats) of one client's label distribution."""
    total = hist_row.sum()
    if total == 0:
        return 0.0
    p = hist_row[hist_row > 0] / total
    return float(-(p * np.log(p)).sum())


def write_partition_manifest(path, spec: PartitionSpec, parts: list[np.ndarray]) -> None:
    """Persist a partition as {"seed":..., "alpha":..., "clients":[[...],...]}."""
    doc = {
        "seed": spec.seed,
        "alpha": spec.alpha,
        "clients": [p.tolist() for p in parts],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")


def read_partition_manifest(path) -> tuple[int, float, list[np.ndarray]]:
    doc = json.loads(Path(path).read_text())
    parts = [np.asarray(p, dtype=np.int64) for p in doc["clients"]]
    return int(doc["seed"]), float(doc["alpha"]), parts
