import os

import numpy as np
import pytest

import dfmlab as dl

DATA_DIR = os.environ.get("DFMLAB_DATA", os.path.join(os.path.dirname(__file__), "..", "data"))
MNIST_DIR = os.path.join(DATA_DIR, "mnist")
CIFAR_DIR = os.path.join(DATA_DIR, "cifar10")


def has_mnist():
    return os.path.exists(os.path.join(MNIST_DIR, "train-images-idx3-ubyte"))


def has_cifar():
    return os.path.exists(os.path.join(CIFAR_DIR, "data_batch_1.bin"))


requires_mnist = pytest.mark.skipif(not has_mnist(), reason=f"MNIST IDX files not found in {MNIST_DIR}")
requires_cifar = pytest.mark.skipif(not has_cifar(), reason=f"CIFAR-10 binaries not found in {CIFAR_DIR}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def lenet_spec():
    return dl.ArchitectureSpec("lenet", (1, 28, 28), 10)


@pytest.fixture
def lenet(lenet_spec):
    return dl.build_model(lenet_spec, seed=7)


@pytest.fixture(scope="session")
def mnist():
    if not has_mnist():
        pytest.skip(f"MNIST IDX files not found in {MNIST_DIR}")
    return dl.load_mnist(MNIST_DIR)


# synthetic on-disk datasets in the exact wire formats, for fast pipeline tests

def write_idx_images(path, images):
    import struct
    n, h, w = images.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", 2051, n, h, w))
        fh.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels):
    import struct
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", 2049, len(labels)))
        fh.write(np.asarray(labels, dtype=np.uint8).tobytes())


def write_synthetic_mnist(dir_, n_train=40, n_test=20, seed=0):
    g = np.random.default_rng(seed)
    for prefix, n in (("train", n_train), ("t10k", n_test)):
        imgs = g.integers(0, 256, (n, 28, 28), dtype=np.uint8)
        write_idx_images(f"{dir_}/{prefix}-images-idx3-ubyte", imgs)
        write_idx_labels(f"{dir_}/{prefix}-labels-idx1-ubyte", g.integers(0, 10, n))


def write_synthetic_cifar(dir_, per_batch=10, seed=0):
    g = np.random.default_rng(seed)
    for name in [f"data_batch_{i}.bin" for i in range(1, 6)] + ["test_batch.bin"]:
        rec = np.empty((per_batch, 3073), dtype=np.uint8)
        rec[:, 0] = g.integers(0, 10, per_batch)
        rec[:, 1:] = g.integers(0, 256, (per_batch, 3072))
        rec.tofile(f"{dir_}/{name}")
