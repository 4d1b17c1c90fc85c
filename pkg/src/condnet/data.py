"""Dataset ingestion: IDX (MNIST-style), CIFAR-10 binary batches, and
synthetic Gaussian blobs for fast tests.

All loaders produce float64 features scaled into [0, 1] and int64 labels.
"""

import gzip
import struct
from dataclasses import dataclass

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 3073  # 1 label byte + 3 * 32 * 32 pixels


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray        # (examples, features), float64 in [0, 1]
    labels: np.ndarray   # (examples,), int64 in [0, n_classes)
    n_classes: int
    split: str = ""

    def __post_init__(self):
        x = np.ascontiguousarray(self.x, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or labels.ndim != 1 or x.shape[0] != labels.shape[0]:
            raise ValueError(
                f"features {x.shape} and labels {labels.shape} do not line up"
            )
        if x.size and (not np.all(np.isfinite(x)) or x.min() < 0.0 or x.max() > 1.0):
            raise ValueError("features must be finite and in [0, 1]")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise ValueError(f"labels out of range for {self.n_classes} classes")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.x.shape[0]

    def take(self, n, split=None):
        return Dataset(self.x[:n], self.labels[:n], self.n_classes,
                       self.split if split is None else split)


@dataclass(frozen=True)
class DataSplits:
    train: Dataset
    valid: Dataset
    test: Dataset


def _open_maybe_gzip(path):
    fh = open(path, "rb")
    head = fh.read(2)
    fh.seek(0)
    if head == b"\x1f\x8b":
        data = gzip.open(fh).read()
        fh.close()
        return data
    data = fh.read()
    fh.close()
    return data


def _read_idx(path, expected_magic):
    raw = _open_maybe_gzip(path)
    if len(raw) < 4:
        raise ValueError(f"{path}: truncated IDX header (only {len(raw)} bytes)")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expected_magic:
        raise ValueError(
            f"{path}: bad IDX magic 0x{magic:08x} at offset 0 "
            f"(expected 0x{expected_magic:08x})"
        )
    n_dims = magic & 0xFF
    header_len = 4 + 4 * n_dims
    if len(raw) < header_len:
        raise ValueError(f"{path}: truncated IDX header at offset {len(raw)}")
    dims = struct.unpack(f">{n_dims}I", raw[4:header_len])
    count = int(np.prod(dims))
    if len(raw) - header_len != count:
        raise ValueError(
            f"{path}: payload is {len(raw) - header_len} bytes, "
            f"dimensions {dims} require {count}"
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=header_len).reshape(dims)


def load_mnist_idx(train_images, train_labels, test_images, test_labels,
                   valid_count=10000):
    """Load the four IDX files; the validation split is carved
    deterministically from the tail of the training set."""
    splits = []
    for images_path, labels_path, split in (
        (train_images, train_labels, "train"),
        (test_images, test_labels, "test"),
    ):
        images = _read_idx(images_path, IDX_IMAGES_MAGIC)
        labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
        if images.shape[0] != labels.shape[0]:
            raise ValueError(
                f"{images_path}: {images.shape[0]} images but "
                f"{labels.shape[0]} labels in {labels_path}"
            )
        x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
        splits.append(Dataset(x, labels.astype(np.int64), 10, split))
    full_train, test = splits
    if not 0 < valid_count < len(full_train):
        raise ValueError(f"valid_count {valid_count} out of range")
    cut = len(full_train) - valid_count
    train = Dataset(full_train.x[:cut], full_train.labels[:cut], 10, "train")
    valid = Dataset(full_train.x[cut:], full_train.labels[cut:], 10, "valid")
    return DataSplits(train, valid, test)


def _read_cifar_bin(path):
    raw = _open_maybe_gzip(path)
    if len(raw) == 0 or len(raw) % CIFAR_RECORD:
        raise ValueError(
            f"{path}: size {len(raw)} is not a multiple of {CIFAR_RECORD}-byte records"
        )
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    if labels.max() > 9:
        raise ValueError(f"{path}: label byte {labels.max()} out of range [0, 9]")
    x = records[:, 1:].astype(np.float64) / 255.0
    return x, labels


def load_cifar10_bin(train_paths, test_path, valid_count=5000):
    """Load CIFAR-10 binary batches; validation is the tail of the training
    batches."""
    xs, ys = [], []
    for path in train_paths:
        x, y = _read_cifar_bin(path)
        xs.append(x)
        ys.append(y)
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    if not 0 < valid_count < len(x):
        raise ValueError(f"valid_count {valid_count} out of range")
    cut = len(x) - valid_count
    xt, yt = _read_cifar_bin(test_path)
    return DataSplits(
        Dataset(x[:cut], y[:cut], 10, "train"),
        Dataset(x[cut:], y[cut:], 10, "valid"),
        Dataset(xt, yt, 10, "test"),
    )


def synth_blobs(n_classes, n_features, n_examples, separation, rng, split=""):
    """Gaussian clusters with unit variance at random centers scaled so the
    closest pair is ``separation`` apart; features min-max scaled to [0, 1]."""
    if n_classes < 2 or n_features < 1 or n_examples < 1:
        raise ValueError("n_classes >= 2, n_features >= 1, n_examples >= 1 required")
    if separation <= 0:
        raise ValueError("separation must be positive")
    centers = rng.standard_normal((n_classes, n_features))
    dists = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=-1)
    min_dist = dists[np.triu_indices(n_classes, k=1)].min()
    if min_dist == 0.0:
        raise ValueError("degenerate random centers; use another seed")
    centers *= separation / min_dist
    labels = rng.integers(0, n_classes, size=n_examples)
    raw = centers[labels] + rng.standard_normal((n_examples, n_features))
    lo, hi = raw.min(), raw.max()
    x = (raw - lo) / (hi - lo) if hi > lo else np.zeros_like(raw)
    return Dataset(x, labels, n_classes, split)


def synth_blob_splits(n_classes, n_features, counts, separation, seed):
    """Train/valid/test blob datasets drawn from one seeded stream."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 4)))
    names = ("train", "valid", "test")
    return DataSplits(*(
        synth_blobs(n_classes, n_features, n, separation, rng, split)
        for n, split in zip(counts, names)
    ))
