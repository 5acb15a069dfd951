"""Datasets, non-IID partitioning and deterministic batch streams."""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError
from .nn import Batch
from .rng import substream

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    """Feature matrix [N, d] with integer labels in [0, num_classes)."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if feats.ndim != 2 or feats.shape[0] < 1:
            raise ValueError("features must be a non-empty 2-D array")
        if labels.shape != (feats.shape[0],):
            raise ValueError("labels must be 1-D with one entry per row")
        if not np.isfinite(feats).all():
            raise ValueError("features must be finite")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if labels.min() < 0 or labels.max() >= self.num_classes:
            raise ValueError("labels must lie in [0, num_classes)")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class Partition:
    """Disjoint, exhaustive assignment of dataset indices to devices."""

    assignments: tuple
    beta: float
    seed: int

    def __post_init__(self):
        object.__setattr__(
            self,
            "assignments",
            tuple(np.asarray(a, dtype=np.int64) for a in self.assignments),
        )

    @property
    def num_devices(self) -> int:
        return len(self.assignments)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([a.size for a in self.assignments], dtype=np.int64)


def dirichlet_partition(
    dataset: Dataset,
    num_devices: int,
    beta: float,
    seed: int,
    min_per_client: int = 1,
    max_retries: int = 100,
) -> Partition:
    """Split per class with Dirichlet(beta) proportions across devices.

    Smaller beta concentrates each class on few devices. If any device ends
    up below min_per_client the whole partition is resampled, up to
    max_retries times.
    """
    if num_devices < 1:
        raise ValueError("num_devices must be >= 1")
    if beta <= 0:
        raise ValueError("beta must be positive")
    if min_per_client < 1:
        raise ValueError("min_per_client must be >= 1")
    if num_devices * min_per_client > dataset.size:
        raise ValueError(
            f"cannot give {min_per_client} samples to each of {num_devices} "
            f"devices from {dataset.size} total"
        )
    alpha = np.full(num_devices, float(beta))
    for attempt in range(max_retries):
        rng = substream(seed, "partition", attempt)
        buckets = [[] for _ in range(num_devices)]
        for cls in range(dataset.num_classes):
            idx = np.flatnonzero(dataset.labels == cls)
            if idx.size == 0:
                continue
            rng.shuffle(idx)
            proportions = rng.dirichlet(alpha)
            cuts = (np.cumsum(proportions) * idx.size).astype(np.int64)[:-1]
            for dev, part in enumerate(np.split(idx, cuts)):
                buckets[dev].append(part)
        assignments = [
            np.sort(np.concatenate(b)) if b else np.empty(0, dtype=np.int64)
            for b in buckets
        ]
        if min(a.size for a in assignments) >= min_per_client:
            return Partition(tuple(assignments), float(beta), int(seed))
    raise ValueError(
        f"could not satisfy min_per_client={min_per_client} within "
        f"{max_retries} attempts (beta={beta}, devices={num_devices})"
    )


def partition_label_entropies(dataset: Dataset, partition: Partition) -> np.ndarray:
    """Natural-log entropy of each device's label distribution."""
    out = np.zeros(partition.num_devices)
    for dev, idx in enumerate(partition.assignments):
        if idx.size == 0:
            continue
        counts = np.bincount(dataset.labels[idx], minlength=dataset.num_classes)
        p = counts[counts > 0] / idx.size
        out[dev] = float(-(p * np.log(p)).sum())
    return out


class BatchStream:
    """Mini-batch iterator over one device's samples.

    Each epoch visits every owned sample exactly once in an order that is a
    pure function of (seed, device, round, epoch), so a stream can be
    re-created anywhere and yields the same batches.
    """

    def __init__(self, dataset: Dataset, indices, device: int, batch_size: int, seed: int):
        idx = np.asarray(indices, dtype=np.int64)
        if idx.size == 0:
            raise ValueError(f"device {device} owns no samples")
        if idx.min() < 0 or idx.max() >= dataset.size:
            raise ValueError("index out of range for dataset")
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.dataset = dataset
        self.indices = idx
        self.device = int(device)
        self.batch_size = int(batch_size)
        self.seed = int(seed)

    @property
    def num_samples(self) -> int:
        return int(self.indices.size)

    @property
    def batches_per_epoch(self) -> int:
        return math.ceil(self.indices.size / self.batch_size)

    def epoch_indices(self, round_idx: int, epoch: int) -> np.ndarray:
        rng = substream(self.seed, "shuffle", self.device, round_idx, epoch)
        return self.indices[rng.permutation(self.indices.size)]

    def batches(self, round_idx: int, epochs: int):
        """Yield Batch objects for the given number of epochs."""
        feats = self.dataset.features
        labels = self.dataset.labels
        for epoch in range(epochs):
            order = self.epoch_indices(round_idx, epoch)
            for start in range(0, order.size, self.batch_size):
                sel = order[start:start + self.batch_size]
                yield Batch(feats[sel], labels[sel])


def synth_blobs(num_classes: int, dim: int, per_class: int, spread: float, seed: int) -> Dataset:
    """Gaussian blobs around unit-norm random class centers."""
    if num_classes < 2 or per_class < 1 or dim < 1:
        raise ValueError("need num_classes >= 2, per_class >= 1, dim >= 1")
    if spread < 0:
        raise ValueError("spread must be >= 0")
    rng = substream(seed, "blobs")
    centers = rng.standard_normal((num_classes, dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    feats = np.empty((num_classes * per_class, dim))
    labels = np.empty(num_classes * per_class, dtype=np.int64)
    for cls in range(num_classes):
        lo = cls * per_class
        noise = rng.standard_normal((per_class, dim))
        feats[lo:lo + per_class] = centers[cls] + spread * noise
        labels[lo:lo + per_class] = cls
    return Dataset(feats, labels, num_classes)


@dataclass(frozen=True)
class QuadraticWorkload:
    """Per-device objectives 0.5 * ||w - center_i||^2.

    The global objective is their mean, minimized at the mean center. Used
    as a closed-form testbed for the federated optimizers: one "epoch" is a
    single full-gradient step.
    """

    centers: np.ndarray

    def __post_init__(self):
        centers = np.asarray(self.centers, dtype=np.float64)
        if centers.ndim != 2 or centers.shape[0] < 1:
            raise ValueError("centers must be a non-empty 2-D array")
        object.__setattr__(self, "centers", centers)

    @property
    def num_devices(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    @property
    def optimum(self) -> np.ndarray:
        return self.centers.mean(axis=0)

    def loss(self, device: int, w: np.ndarray) -> float:
        diff = w - self.centers[device]
        return 0.5 * float(diff @ diff)

    def grad(self, device: int, w: np.ndarray) -> np.ndarray:
        return w - self.centers[device]

    def global_loss(self, w: np.ndarray) -> float:
        diff = w - self.centers
        return 0.5 * float((diff * diff).sum(axis=1).mean())

    def global_grad(self, w: np.ndarray) -> np.ndarray:
        return w - self.optimum

    def distance_to_optimum(self, w: np.ndarray) -> float:
        return float(np.linalg.norm(w - self.optimum))


def synth_quadratics(num_devices: int, dim: int, heterogeneity: float, seed: int) -> QuadraticWorkload:
    """Random quadratic centers base + heterogeneity * offset_i.

    heterogeneity 0 makes every device share one objective.
    """
    if num_devices < 2:
        raise ValueError("num_devices must be >= 2")
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if heterogeneity < 0:
        raise ValueError("heterogeneity must be >= 0")
    rng = substream(seed, "quadratics")
    base = rng.standard_normal(dim)
    offsets = rng.standard_normal((num_devices, dim))
    return QuadraticWorkload(base + heterogeneity * offsets)


def load_csv(path: str, skip_header: bool = False) -> Dataset:
    """Read a delimited text dataset, label in the last column."""
    rows = []
    labels = []
    width = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if skip_header and lineno == 1:
                continue
            if not row:
                continue
            if width is None:
                width = len(row)
                if width < 2:
                    raise DataFormatError(f"{path}:{lineno}: need >= 2 columns")
            elif len(row) != width:
                raise DataFormatError(
                    f"{path}:{lineno}: expected {width} columns, got {len(row)}"
                )
            try:
                values = [float(v) for v in row]
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: non-numeric field") from exc
            label = values[-1]
            if not label.is_integer() or label < 0:
                raise DataFormatError(
                    f"{path}:{lineno}: label must be a non-negative integer"
                )
            rows.append(values[:-1])
            labels.append(int(label))
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    feats = np.asarray(rows, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    return Dataset(feats, y, int(y.max()) + 1)


def _read_exact(fh, count: int, path: str) -> bytes:
    buf = fh.read(count)
    if len(buf) != count:
        raise DataFormatError(f"{path}: truncated file")
    return buf


def load_idx(images_path: str, labels_path: str) -> Dataset:
    """Read the big-endian image/label binary pair; pixels scale to [0, 1]."""
    with open(images_path, "rb") as fh:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(fh, 16, images_path))
        if magic != IDX_IMAGES_MAGIC:
            raise DataFormatError(f"{images_path}: bad magic 0x{magic:08x}")
        pixels = np.frombuffer(
            _read_exact(fh, count * rows * cols, images_path), dtype=np.uint8
        )
        if fh.read(1):
            raise DataFormatError(f"{images_path}: trailing bytes")
    with open(labels_path, "rb") as fh:
        magic, label_count = struct.unpack(">II", _read_exact(fh, 8, labels_path))
        if magic != IDX_LABELS_MAGIC:
            raise DataFormatError(f"{labels_path}: bad magic 0x{magic:08x}")
        labels = np.frombuffer(_read_exact(fh, label_count, labels_path), dtype=np.uint8)
        if fh.read(1):
            raise DataFormatError(f"{labels_path}: trailing bytes")
    if count != label_count:
        raise DataFormatError(
            f"image count {count} != label count {label_count}"
        )
    feats = pixels.astype(np.float64).reshape(count, rows * cols) / 255.0
    y = labels.astype(np.int64)
    return Dataset(feats, y, int(y.max()) + 1)


def holdout_split(dataset: Dataset, fraction: float, seed: int):
    """Deterministically split into (train, test) datasets."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("holdout fraction must be in (0, 1)")
    rng = substream(seed, "holdout")
    perm = rng.permutation(dataset.size)
    n_test = max(1, int(round(fraction * dataset.size)))
    if n_test >= dataset.size:
        raise ValueError("holdout fraction leaves no training data")
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])
    train = Dataset(dataset.features[train_idx], dataset.labels[train_idx], dataset.num_classes)
    test = Dataset(dataset.features[test_idx], dataset.labels[test_idx], dataset.num_classes)
    return train, test
