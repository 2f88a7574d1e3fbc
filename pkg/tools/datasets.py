"""
tools/datasets.py - Dataset synthesis, IDX loading and CSV export
Synthetic Gaussian blobs stand in for the image/text corpora at desk scale
"""
import gzip
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import pandas as pd

from utils.errors import DataFormatError, NoSamplesError
from utils.patterns import check_labels, make_rng

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
MIN_SEPARATION = 6.0


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # (n, f)
    labels: np.ndarray  # (n,)
    num_classes: int

    def __post_init__(self):
        features = np.atleast_2d(np.asarray(self.features, dtype=float))
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if labels.shape[0] < 1:
            raise NoSamplesError()
        if features.shape[0] != labels.shape[0]:
            raise DataFormatError(f"count mismatch: {features.shape[0]} rows vs {labels.shape[0]} labels")
        check_labels(labels, self.num_classes)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return self.labels.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: np.ndarray) -> "Dataset":
        return Dataset(self.features[indices], self.labels[indices], self.num_classes)


@dataclass(frozen=True)
class ClientDataset:
    """A client's view into a parent dataset"""
    client_id: int
    parent: Dataset
    indices: np.ndarray

    def __post_init__(self):
        indices = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        if indices.size == 0:
            raise NoSamplesError()
        if indices.min() < 0 or indices.max() >= self.parent.size:
            raise IndexError("client indices outside the parent dataset")
        object.__setattr__(self, "indices", indices)

    @property
    def n_k(self) -> int:
        return self.indices.shape[0]

    @property
    def features(self) -> np.ndarray:
        return self.parent.features[self.indices]

    @property
    def labels(self) -> np.ndarray:
        return self.parent.labels[self.indices]

    @property
    def num_classes(self) -> int:
        return self.parent.num_classes

    def classes(self) -> Tuple[int, ...]:
        return tuple(int(c) for c in np.unique(self.labels))

    def materialize(self) -> Dataset:
        return self.parent.subset(self.indices)


def synth_blobs(num_classes: int, feature_dim: int, per_class: int, spread: float, seed: int) -> Dataset:
    """
    Isotropic Gaussian blobs, one per class, shuffled

    Class means are drawn from the seed and rescaled so every pair sits at least
    MIN_SEPARATION * spread apart.
    """
    if num_classes < 2 or per_class < 1:
        raise ValueError("need at least 2 classes and 1 sample per class")
    rng = make_rng(seed, "synth_blobs")
    means = rng.standard_normal((num_classes, feature_dim))
    gaps = np.linalg.norm(means[:, None, :] - means[None, :, :], axis=2)
    min_gap = gaps[np.triu_indices(num_classes, k=1)].min()
    means *= max(1.0, MIN_SEPARATION * spread / max(min_gap, 1e-12))

    labels = np.repeat(np.arange(num_classes), per_class)
    features = means[labels] + spread * rng.standard_normal((labels.shape[0], feature_dim))
    order = rng.permutation(labels.shape[0])
    return Dataset(features[order], labels[order], num_classes)


def split_dataset(ds: Dataset, test_fraction: float, seed: int) -> Tuple[Dataset, Dataset]:
    """Stratified train/test split; the test side covers every class present"""
    rng = make_rng(seed, "split")
    train_idx, test_idx = [], []
    for class_id in range(ds.num_classes):
        pool = rng.permutation(np.flatnonzero(ds.labels == class_id))
        if pool.size == 0:
            continue
        n_test = min(pool.size - 1, max(1, int(round(test_fraction * pool.size)))) if pool.size > 1 else 0
        test_idx.append(pool[:n_test])
        train_idx.append(pool[n_test:])
    train = np.sort(np.concatenate(train_idx))
    test = np.sort(np.concatenate(test_idx))
    return ds.subset(train), ds.subset(test)


def _read_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    try:
        with opener(path, "rb") as handle:
            return handle.read()
    except OSError as err:
        raise DataFormatError(f"cannot read {path}: {err}") from None


def _parse_idx(blob: bytes, magic: int, header_ints: int, path) -> Tuple[Tuple[int, ...], bytes]:
    header_size = 4 * (1 + header_ints)
    if len(blob) < header_size:
        raise DataFormatError(f"{path}: truncated header")
    found, *dims = struct.unpack(f">I{header_ints}I", blob[:header_size])
    if found != magic:
        raise DataFormatError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    payload = blob[header_size:]
    expected = int(np.prod(dims))
    if len(payload) < expected:
        raise DataFormatError(f"{path}: truncated payload ({len(payload)} of {expected} bytes)")
    return tuple(dims), payload[:expected]


def load_idx(images_path, labels_path, num_classes: Optional[int] = None) -> Dataset:
    """
    Load an IDX image/label pair (optionally gzipped) as a Dataset

    Pixels are flattened row-major and scaled to [0, 1].
    """
    (count, rows, cols), pixels = _parse_idx(_read_bytes(images_path), IDX_IMAGES_MAGIC, 3, images_path)
    (label_count,), label_bytes = _parse_idx(_read_bytes(labels_path), IDX_LABELS_MAGIC, 1, labels_path)
    if count != label_count:
        raise DataFormatError(f"count mismatch: {count} images vs {label_count} labels")
    features = np.frombuffer(pixels, dtype=np.uint8).reshape(count, rows * cols) / 255.0
    labels = np.frombuffer(label_bytes, dtype=np.uint8).astype(np.int64)
    if num_classes is None:
        num_classes = max(int(labels.max()) + 1, 2) if count else 2
    logger.info("Loaded %d IDX images of %dx%d from %s", count, rows, cols, images_path)
    return Dataset(features, labels, num_classes)


def export_csv(ds: Dataset, path) -> None:
    """Write features as f0..f{f-1} followed by a label column"""
    frame = pd.DataFrame(ds.features, columns=[f"f{j}" for j in range(ds.feature_dim)])
    frame["label"] = ds.labels
    frame.to_csv(path, index=False)
