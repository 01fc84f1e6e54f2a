"""Readers for the public MNIST IDX and CIFAR-10 binary layouts.

No downloads happen here. Fetch the files yourself (MNIST from the usual
``train-images-idx3-ubyte`` set, CIFAR-10 "binary version") and point
``LOOKUPMUL_DATA_ROOT`` at them.
"""
import gzip
import hashlib
import os
import struct
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from LookupMul.exceptions import (BadMagic, ChecksumError, CountMismatch, DatasetNotFound,
                                  InvalidArgument, TruncatedFile)
from LookupMul.utils.logger import logger

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 3073
CIFAR_PIXELS = 3072

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
CIFAR_FILES = {
    "train": tuple(f"data_batch_{i}.bin" for i in range(1, 6)),
    "test": ("test_batch.bin",),
}


@dataclass
class LabeledDataset:
    features: np.ndarray   # N x D, float32 in [0, 1]
    labels: np.ndarray     # N ints
    num_classes: int = 10

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise CountMismatch(f"{self.features.shape[0]} feature rows for {self.labels.shape[0]} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise InvalidArgument(f"labels must lie in [0, {self.num_classes})")

    @property
    def num_rows(self) -> int:
        return int(self.labels.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def take(self, rows) -> "LabeledDataset":
        return LabeledDataset(self.features[rows], self.labels[rows], self.num_classes)

    def head(self, n: Optional[int]) -> "LabeledDataset":
        if n is None or n >= self.num_rows:
            return self
        return self.take(slice(0, n))


def _read_bytes(path: str) -> bytes:
    if not os.path.isfile(path):
        raise DatasetNotFound(f"Dataset file not found: {path}")
    opener = gzip.open if path.endswith(".gz") else open
    with opener(path, "rb") as f:
        return f.read()


def verify_sha256(path: str, expected: str) -> None:
    digest = hashlib.sha256(_read_bytes(path)).hexdigest()
    if digest != expected.lower():
        raise ChecksumError(f"{path}: sha256 {digest} does not match {expected}")


def _check_header(raw: bytes, path: str, magic_expected: int, header: int) -> None:
    if len(raw) >= 4:
        magic = struct.unpack(">I", raw[:4])[0]
        if magic != magic_expected:
            raise BadMagic(f"{path}: magic 0x{magic:08x}, expected 0x{magic_expected:08x}")
    if len(raw) < header:
        raise TruncatedFile(f"{path}: expected a {header} byte header, got {len(raw)} bytes")


def _parse_idx_images(raw: bytes, path: str) -> np.ndarray:
    _check_header(raw, path, IDX_IMAGES_MAGIC, 16)
    _, count, rows, cols = struct.unpack(">IIII", raw[:16])
    expected = 16 + count * rows * cols
    if len(raw) != expected:
        raise TruncatedFile(f"{path}: expected {expected} bytes, got {len(raw)}")
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=16)
    return pixels.reshape(count, rows * cols)


def _parse_idx_labels(raw: bytes, path: str) -> np.ndarray:
    _check_header(raw, path, IDX_LABELS_MAGIC, 8)
    _, count = struct.unpack(">II", raw[:8])
    expected = 8 + count
    if len(raw) != expected:
        raise TruncatedFile(f"{path}: expected {expected} bytes, got {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8, offset=8).astype(np.int64)


def load_mnist(images_path: str, labels_path: str) -> LabeledDataset:
    images = _parse_idx_images(_read_bytes(images_path), images_path)
    labels = _parse_idx_labels(_read_bytes(labels_path), labels_path)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatch(f"{images_path} holds {images.shape[0]} images but "
                            f"{labels_path} holds {labels.shape[0]} labels")
    if labels.size and labels.max() >= 10:
        raise InvalidArgument(f"{labels_path}: label {labels.max()} out of range")
    logger.info(f"Loaded {images.shape[0]} MNIST images from {images_path}")
    return LabeledDataset(images.astype(np.float32) / 255.0, labels, 10)


def load_cifar10(paths: Sequence[str]) -> LabeledDataset:
    features, labels = [], []
    for path in paths:
        raw = _read_bytes(path)
        if len(raw) % CIFAR_RECORD != 0:
            raise TruncatedFile(f"{path}: size {len(raw)} is not a multiple of {CIFAR_RECORD}")
        records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        if records.size and records[:, 0].max() >= 10:
            raise InvalidArgument(f"{path}: label {records[:, 0].max()} out of range")
        labels.append(records[:, 0].astype(np.int64))
        features.append(records[:, 1:].astype(np.float32) / 255.0)
        logger.info(f"Loaded {records.shape[0]} CIFAR-10 records from {path}")
    if not features:
        return LabeledDataset(np.zeros((0, CIFAR_PIXELS), dtype=np.float32), np.zeros(0), 10)
    return LabeledDataset(np.concatenate(features), np.concatenate(labels), 10)


def _resolve(root: str, name: str) -> str:
    plain = os.path.join(root, name)
    if os.path.isfile(plain):
        return plain
    gz = plain + ".gz"
    return gz if os.path.isfile(gz) else plain


def dataset_paths(dataset: str, split: str, root: str) -> List[str]:
    if dataset == "mnist":
        return [_resolve(root, name) for name in MNIST_FILES[split]]
    if dataset == "cifar10":
        return [_resolve(os.path.join(root, "cifar-10-batches-bin"), name)
                if os.path.isdir(os.path.join(root, "cifar-10-batches-bin")) else _resolve(root, name)
                for name in CIFAR_FILES[split]]
    raise InvalidArgument(f"unknown dataset {dataset!r}")


def load_dataset(dataset: str, split: str, root: str) -> LabeledDataset:
    paths = dataset_paths(dataset, split, root)
    if dataset == "mnist":
        return load_mnist(*paths)
    return load_cifar10(paths)


def load_splits(dataset: str, root: str) -> Tuple[LabeledDataset, LabeledDataset]:
    return load_dataset(dataset, "train", root), load_dataset(dataset, "test", root)
