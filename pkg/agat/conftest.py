import gzip
import numpy as np
import pytest
import struct
import torch

from .rng import Rng


@pytest.fixture(scope="session", autouse=True)
def float64_everywhere():
    """Numerics in this package are float64; make stray default-dtype tensors agree."""
    previous = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    torch.use_deterministic_algorithms(True)
    yield
    torch.set_default_dtype(previous)


@pytest.fixture
def rng():
    return Rng(1234)


def synthetic_digits(n: int, seed: int = 0, size: int = 28, channels: int = 1):
    """A learnable stand-in for digit images: class k lights a 6x6 block at one of
    ten fixed places, over faint background noise.
    """
    from .data.dataset import LabeledDataset

    r = Rng(seed)
    labels = torch.from_numpy(r.integers(0, 10, size=n))
    images = 0.1 * r.uniform(0, 1, (n, channels, size, size))

    step = (size - 8) // 3
    for i, k in enumerate(labels.tolist()):
        row, col = divmod(k, 4)
        top, left = 2 + row * step, 2 + col * step
        images[i, :, top : top + 6, left : left + 6] = 0.9

    return LabeledDataset(images, labels, num_classes=10)


@pytest.fixture
def digits():
    return synthetic_digits(64, seed=7)


def write_idx_images(path, images: np.ndarray, magic: int = 2051, compress: bool = False):
    n, rows, cols = images.shape
    payload = struct.pack(">IIII", magic, n, rows, cols) + images.astype(np.uint8).tobytes()
    opener = gzip.open if compress else open
    with opener(path, "wb") as f:
        f.write(payload)


def write_idx_labels(path, labels: np.ndarray, magic: int = 2049):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", magic, len(labels)) + labels.astype(np.uint8).tobytes())


def write_cifar_batch(path, labels: np.ndarray, pixels: np.ndarray):
    records = [bytes([int(label)]) + p.astype(np.uint8).tobytes() for label, p in zip(labels, pixels)]
    with open(path, "wb") as f:
        f.write(b"".join(records))


@pytest.fixture
def idx_files(tmp_path):
    """Ten 28x28 images with raw bytes 0..255 and matching labels."""
    r = np.random.default_rng(0)
    images = r.integers(0, 256, size=(10, 28, 28))
    images[0, 0, 0] = 255
    labels = np.arange(10)

    images_path = tmp_path / "images-idx3-ubyte"
    labels_path = tmp_path / "labels-idx1-ubyte"
    write_idx_images(images_path, images)
    write_idx_labels(labels_path, labels)

    return images_path, labels_path, images, labels
