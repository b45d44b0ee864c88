"""Dataset ingestion: MNIST IDX files and CIFAR-10 binary batches.

Both parsers validate the on-disk format strictly (magic numbers, record
sizes, label ranges) and reject malformed input with an offset diagnostic
before constructing any dataset state.
"""

import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049
CIFAR_RECORD_BYTES = 3073  # 1 label byte + 3 x 32 x 32 channel-major pixels


@dataclass
class Dataset:
    images: np.ndarray  # [N, C, H, W] float32 in [0, 1]
    labels: np.ndarray  # [N] int64
    split: str

    def __post_init__(self):
        if self.images.shape[0] == 0:
            raise ValueError("dataset must contain at least one sample")
        if self.images.shape[0] != self.labels.shape[0]:
            raise ValueError("image/label count mismatch")

    @property
    def num_classes(self):
        return int(self.labels.max()) + 1

    def subset(self, indices):
        idx = np.asarray(list(indices))
        return Dataset(self.images[idx], self.labels[idx], self.split)


def _read_bytes(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
        rest = fh.read()
    raw = head + rest
    if head == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _read_idx(path, expect_magic, expect_rank):
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise ValueError(f"{path}: truncated at offset 0, no magic")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expect_magic:
        raise ValueError(f"{path}: bad magic {magic} at offset 0, expected {expect_magic}")
    header = 4 + 4 * expect_rank
    if len(raw) < header:
        raise ValueError(f"{path}: truncated at offset {len(raw)}, header needs {header} bytes")
    dims = struct.unpack(">" + "I" * expect_rank, raw[4:header])
    expected = header + int(np.prod(dims))
    if len(raw) != expected:
        raise ValueError(f"{path}: size {len(raw)} != expected {expected} (truncated at offset {len(raw)})")
    return dims, np.frombuffer(raw, dtype=np.uint8, offset=header)


def _load_mnist_split(dir_, images_name, labels_name, split):
    dims, pixels = _read_idx(os.path.join(dir_, images_name), IDX_IMAGES_MAGIC, 3)
    n, h, w = dims
    (ln,), labels = _read_idx(os.path.join(dir_, labels_name), IDX_LABELS_MAGIC, 1)
    if ln != n:
        raise ValueError(f"{labels_name}: {ln} labels for {n} images")
    images = pixels.reshape(n, 1, h, w).astype(np.float32) / 255.0
    return Dataset(images, labels.astype(np.int64), split)


def load_mnist(dir_):
    """Load the four IDX files; returns (train, test) with pixels in [0, 1]."""
    train = _load_mnist_split(dir_, "train-images-idx3-ubyte", "train-labels-idx1-ubyte", "train")
    test = _load_mnist_split(dir_, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", "test")
    return train, test


def _read_cifar_file(path):
    raw = _read_bytes(path)
    if len(raw) == 0 or len(raw) % CIFAR_RECORD_BYTES:
        raise ValueError(
            f"{path}: size {len(raw)} is not a positive multiple of {CIFAR_RECORD_BYTES}"
        )
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
    labels = records[:, 0]
    if labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise ValueError(f"{path}: label {labels[bad]} out of range [0, 9] in record {bad}")
    images = records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
    return images, labels.astype(np.int64)


def load_cifar10(dir_):
    """Load data_batch_1..5.bin and test_batch.bin; returns (train, test)."""
    xs, ys = [], []
    for b in range(1, 6):
        x, y = _read_cifar_file(os.path.join(dir_, f"data_batch_{b}.bin"))
        xs.append(x)
        ys.append(y)
    train = Dataset(np.concatenate(xs), np.concatenate(ys), "train")
    x, y = _read_cifar_file(os.path.join(dir_, "test_batch.bin"))
    test = Dataset(x, y, "test")
    return train, test
