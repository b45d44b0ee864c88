import struct

import numpy as np
import pytest

import dfmlab as dl
from conftest import (CIFAR_DIR, MNIST_DIR, requires_cifar, requires_mnist,
                      write_idx_images, write_idx_labels,
                      write_synthetic_cifar, write_synthetic_mnist)
from dfmlab.data import CIFAR_RECORD_BYTES, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC


# ---------------------------------------------------------------------------
# MNIST IDX


def test_idx_magic_constant():
    assert IDX_IMAGES_MAGIC == 2051
    assert IDX_LABELS_MAGIC == 2049


def test_synthetic_mnist_roundtrip(tmp_path):
    write_synthetic_mnist(tmp_path)
    train, test = dl.load_mnist(tmp_path)
    assert train.images.shape == (40, 1, 28, 28)
    assert test.images.shape == (20, 1, 28, 28)
    assert train.images.dtype == np.float32
    assert 0.0 <= train.images.min() and train.images.max() <= 1.0


def test_pixel_scaling(tmp_path):
    write_synthetic_mnist(tmp_path)  # creates the test-split files
    imgs = np.zeros((2, 28, 28), dtype=np.uint8)
    imgs[0, 0, 0] = 255
    write_idx_images(tmp_path / "train-images-idx3-ubyte", imgs)
    write_idx_labels(tmp_path / "train-labels-idx1-ubyte", [1, 2])
    train, _ = dl.load_mnist(tmp_path)
    assert train.images[0, 0, 0, 0] == 1.0
    assert train.images[0, 0, 0, 1] == 0.0


def test_bad_magic_rejected(tmp_path):
    write_synthetic_mnist(tmp_path)
    with open(tmp_path / "train-images-idx3-ubyte", "r+b") as fh:
        fh.write(struct.pack(">I", 1234))
    with pytest.raises(ValueError, match="bad magic 1234 at offset 0"):
        dl.load_mnist(tmp_path)


def test_truncated_idx_rejected(tmp_path):
    write_synthetic_mnist(tmp_path)
    path = tmp_path / "train-images-idx3-ubyte"
    data = path.read_bytes()
    path.write_bytes(data[:-10])
    with pytest.raises(ValueError, match="truncated at offset"):
        dl.load_mnist(tmp_path)


def test_label_count_mismatch_rejected(tmp_path):
    write_synthetic_mnist(tmp_path)
    write_idx_labels(tmp_path / "train-labels-idx1-ubyte", [0, 1, 2])
    with pytest.raises(ValueError, match="labels for"):
        dl.load_mnist(tmp_path)


@requires_mnist
def test_real_mnist_counts_and_range():
    train, test = dl.load_mnist(MNIST_DIR)
    assert train.images.shape == (60_000, 1, 28, 28)
    assert test.images.shape == (10_000, 1, 28, 28)
    assert train.labels.min() == 0 and train.labels.max() == 9
    assert train.images.max() == 1.0 and train.images.min() == 0.0


# ---------------------------------------------------------------------------
# CIFAR-10 binary


def test_synthetic_cifar_roundtrip(tmp_path):
    g = np.random.default_rng(3)
    label = 7
    pixels = g.integers(0, 256, 3072, dtype=np.uint8)
    rec = np.concatenate([[label], pixels]).astype(np.uint8)
    for name in [f"data_batch_{i}.bin" for i in range(1, 6)] + ["test_batch.bin"]:
        rec.tofile(tmp_path / name)
    train, test = dl.load_cifar10(tmp_path)
    assert train.images.shape == (5, 3, 32, 32)
    assert test.labels[0] == label
    np.testing.assert_allclose(test.images[0].reshape(-1) * 255.0, pixels, atol=1e-4)


def test_cifar_record_size_validated(tmp_path):
    write_synthetic_cifar(tmp_path)
    with open(tmp_path / "data_batch_2.bin", "ab") as fh:
        fh.write(b"\x00" * 10)
    with pytest.raises(ValueError, match="not a positive multiple"):
        dl.load_cifar10(tmp_path)


def test_cifar_label_range_validated(tmp_path):
    write_synthetic_cifar(tmp_path)
    with open(tmp_path / "data_batch_1.bin", "r+b") as fh:
        fh.write(b"\xff")
    with pytest.raises(ValueError, match="out of range"):
        dl.load_cifar10(tmp_path)


@requires_cifar
def test_real_cifar_counts():
    train, test = dl.load_cifar10(CIFAR_DIR)
    assert train.images.shape == (50_000, 3, 32, 32)
    assert test.images.shape == (10_000, 3, 32, 32)
    assert np.bincount(test.labels).tolist() == [1000] * 10


def test_subset_preserves_alignment(tmp_path):
    write_synthetic_mnist(tmp_path)
    train, _ = dl.load_mnist(tmp_path)
    sub = train.subset([3, 1, 4])
    np.testing.assert_array_equal(sub.labels, train.labels[[3, 1, 4]])
    np.testing.assert_array_equal(sub.images, train.images[[3, 1, 4]])
