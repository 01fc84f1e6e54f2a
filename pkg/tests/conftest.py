import os
import struct

import numpy as np
import pytest

from LookupMul.config import Experiment
from LookupMul.utils.datasets import IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC, MNIST_FILES


def write_idx_images(path, pixels):
    pixels = np.asarray(pixels, dtype=np.uint8)
    n, rows, cols = pixels.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        f.write(pixels.tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.size))
        f.write(labels.tobytes())


def write_mnist_split(root, split, n, seed):
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 10
    pixels = rng.integers(0, 40, size=(n, 28, 28), dtype=np.uint8)
    # a bright stripe per class keeps the toy set learnable
    for i, label in enumerate(labels):
        pixels[i, 2 * label:2 * label + 2, :] = 255
    images_name, labels_name = MNIST_FILES[split]
    write_idx_images(os.path.join(root, images_name), pixels)
    write_idx_labels(os.path.join(root, labels_name), labels)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def mnist_root(tmp_path):
    """Tiny synthetic MNIST laid out like the official files."""
    write_mnist_split(str(tmp_path), "train", 80, seed=1)
    write_mnist_split(str(tmp_path), "test", 40, seed=2)
    return str(tmp_path)


def real_mnist_root():
    root = Experiment.DATA_ROOT
    names = MNIST_FILES["train"] + MNIST_FILES["test"]
    present = all(os.path.isfile(os.path.join(root, n)) or os.path.isfile(os.path.join(root, n + ".gz"))
                  for n in names)
    return root if present else None
