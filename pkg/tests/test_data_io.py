import gzip
import hashlib
import os
import struct
import zlib

import numpy as np
import pytest

from LookupMul.amm.table import FitConfig
from LookupMul.exceptions import (BadMagic, ChecksumError, CountMismatch, DatasetNotFound,
                                  LookupMulError, TruncatedFile, VersionError)
from LookupMul.nn.model import MlpModel, forward
from LookupMul.nn.replace import replace_layer
from LookupMul.utils.archive import MAGIC, dumps, load_model, loads, save_model
from LookupMul.utils.datasets import (CIFAR_RECORD, LabeledDataset, load_cifar10, load_dataset,
                                      load_mnist, verify_sha256)
from tests.conftest import write_idx_images, write_idx_labels


class TestMnist:
    def test_all_zero_fixture(self, tmp_path):
        write_idx_images(tmp_path / "img", np.zeros((2, 28, 28)))
        write_idx_labels(tmp_path / "lbl", [3, 7])
        data = load_mnist(str(tmp_path / "img"), str(tmp_path / "lbl"))
        assert data.features.shape == (2, 784)
        assert not data.features.any()
        np.testing.assert_array_equal(data.labels, [3, 7])

    def test_pixels_scaled(self, tmp_path):
        pixels = np.zeros((1, 2, 2), dtype=np.uint8)
        pixels[0, 1, 1] = 255
        write_idx_images(tmp_path / "img", pixels)
        write_idx_labels(tmp_path / "lbl", [0])
        data = load_mnist(str(tmp_path / "img"), str(tmp_path / "lbl"))
        np.testing.assert_array_equal(data.features, [[0.0, 0.0, 0.0, 1.0]])

    def test_truncated_images(self, tmp_path):
        write_idx_images(tmp_path / "img", np.zeros((3, 4, 4)))
        raw = (tmp_path / "img").read_bytes()
        (tmp_path / "img").write_bytes(raw[:-5])
        write_idx_labels(tmp_path / "lbl", [0, 1, 2])
        with pytest.raises(TruncatedFile, match="expected 64 bytes, got 59"):
            load_mnist(str(tmp_path / "img"), str(tmp_path / "lbl"))

    def test_swapped_files(self, tmp_path):
        write_idx_images(tmp_path / "img", np.zeros((2, 4, 4)))
        write_idx_labels(tmp_path / "lbl", [0, 1])
        with pytest.raises(BadMagic):
            load_mnist(str(tmp_path / "lbl"), str(tmp_path / "img"))

    def test_short_labels_file_as_images_is_bad_magic(self, tmp_path):
        write_idx_labels(tmp_path / "lbl", [0, 1])
        assert len((tmp_path / "lbl").read_bytes()) < 16
        with pytest.raises(BadMagic, match="expected 0x00000803"):
            load_mnist(str(tmp_path / "lbl"), str(tmp_path / "lbl"))

    def test_count_mismatch(self, tmp_path):
        write_idx_images(tmp_path / "img", np.zeros((2, 4, 4)))
        write_idx_labels(tmp_path / "lbl", [0, 1, 2])
        with pytest.raises(CountMismatch):
            load_mnist(str(tmp_path / "img"), str(tmp_path / "lbl"))

    def test_missing_file_names_path(self, tmp_path):
        missing = str(tmp_path / "nope")
        with pytest.raises(DatasetNotFound, match="nope"):
            load_mnist(missing, missing)

    def test_gzip_and_layout(self, mnist_root):
        for name in os.listdir(mnist_root):
            path = os.path.join(mnist_root, name)
            with open(path, "rb") as src, gzip.open(path + ".gz", "wb") as dst:
                dst.write(src.read())
            os.remove(path)
        train = load_dataset("mnist", "train", mnist_root)
        assert (train.num_rows, train.dim) == (80, 784)

    def test_corrupted_fixtures_rejected(self, tmp_path):
        write_idx_images(tmp_path / "img", np.zeros((2, 3, 3)))
        write_idx_labels(tmp_path / "lbl", [0, 1])
        raw = (tmp_path / "img").read_bytes()
        for cut in range(len(raw)):
            (tmp_path / "bad").write_bytes(raw[:cut])
            with pytest.raises(LookupMulError):
                load_mnist(str(tmp_path / "bad"), str(tmp_path / "lbl"))
        for pos in range(4):
            flipped = bytearray(raw)
            flipped[pos] ^= 0xFF
            (tmp_path / "bad").write_bytes(bytes(flipped))
            with pytest.raises(LookupMulError):
                load_mnist(str(tmp_path / "bad"), str(tmp_path / "lbl"))


class TestCifar:
    def _write(self, path, labels):
        records = np.zeros((len(labels), CIFAR_RECORD), dtype=np.uint8)
        records[:, 0] = labels
        records[:, 1:] = 51
        path.write_bytes(records.tobytes())

    def test_two_records(self, tmp_path):
        self._write(tmp_path / "b.bin", [4, 9])
        data = load_cifar10([str(tmp_path / "b.bin")])
        assert data.features.shape == (2, 3072)
        np.testing.assert_array_equal(data.labels, [4, 9])
        np.testing.assert_allclose(data.features, 0.2, atol=1e-7)

    def test_wrong_size(self, tmp_path):
        (tmp_path / "b.bin").write_bytes(b"\x00" * (CIFAR_RECORD + 1))
        with pytest.raises(TruncatedFile):
            load_cifar10([str(tmp_path / "b.bin")])

    def test_batches_concatenate(self, tmp_path):
        self._write(tmp_path / "a.bin", [1])
        self._write(tmp_path / "b.bin", [2, 3])
        data = load_cifar10([str(tmp_path / "a.bin"), str(tmp_path / "b.bin")])
        np.testing.assert_array_equal(data.labels, [1, 2, 3])


def test_verify_sha256(tmp_path):
    path = tmp_path / "f"
    path.write_bytes(b"lookup")
    verify_sha256(str(path), hashlib.sha256(b"lookup").hexdigest().upper())
    with pytest.raises(ChecksumError):
        verify_sha256(str(path), "0" * 64)


def test_dataset_head(rng):
    data = LabeledDataset(rng.normal(size=(10, 3)).astype(np.float32), np.arange(10) % 2, 2)
    assert data.head(4).num_rows == 4
    assert data.head(None) is data


def _replaced_model(rng):
    x = rng.uniform(size=(64, 6))
    data = LabeledDataset(x.astype(np.float32), np.arange(64) % 3, 3)
    model = MlpModel.initialize([6, 5, 3], seed=9)
    model = replace_layer(model, 0, data, 3, "r2", FitConfig(opt_steps=5), rng=1)
    return replace_layer(model, 1, data, 2, "naive",
                         FitConfig(objective="kld", encoder="pq", quantize=True, opt_steps=5), rng=2), x


class TestArchive:
    def test_dense_round_trip(self, tmp_path, rng):
        model = MlpModel.initialize([7, 5, 3], seed=1)
        model.metadata["note"] = "dense"
        path = str(tmp_path / "m.itlm")
        size = save_model(path, model)
        assert size == os.path.getsize(path)
        loaded = load_model(path)
        x = rng.normal(size=(4, 7))
        np.testing.assert_array_equal(forward(loaded, x)[0], forward(model, x)[0])
        assert loaded.metadata == model.metadata

    def test_replaced_round_trip(self, rng):
        model, x = _replaced_model(rng)
        raw = dumps(model)
        loaded = loads(raw)
        assert dumps(loaded) == raw
        assert loaded.replaced() == [True, True]
        assert loaded.layers[1].use_quantized
        np.testing.assert_array_equal(forward(loaded, x)[0], forward(model, x)[0])
        np.testing.assert_array_equal(loaded.layers[1].table.q, model.layers[1].table.q)

    def test_random_round_trips(self):
        rng = np.random.default_rng(77)
        for _ in range(100):
            arch = [int(n) for n in rng.integers(1, 6, size=rng.integers(2, 5))]
            model = MlpModel.initialize(arch, seed=int(rng.integers(1000)))
            raw = dumps(model)
            assert dumps(loads(raw)) == raw

    def test_every_flipped_byte_rejected(self):
        raw = dumps(MlpModel.initialize([3, 2], seed=0))
        for pos in range(len(raw)):
            flipped = bytearray(raw)
            flipped[pos] ^= 0x01
            with pytest.raises(LookupMulError):
                loads(bytes(flipped))

    def test_bad_magic(self):
        raw = bytearray(dumps(MlpModel.initialize([3, 2])))
        raw[:4] = b"NOPE"
        with pytest.raises(BadMagic):
            loads(bytes(raw))

    def test_truncated(self):
        with pytest.raises(TruncatedFile):
            loads(MAGIC + b"\x01")

    def _reseal(self, body):
        return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)

    def test_future_version(self):
        body = MAGIC + struct.pack("<II", 2, 0)
        with pytest.raises(VersionError):
            loads(self._reseal(body))

    def test_unknown_section(self):
        body = MAGIC + struct.pack("<II", 1, 1) + struct.pack("<IQ", 99, 3) + b"abc"
        with pytest.raises(VersionError, match="unknown section"):
            loads(self._reseal(body))

    def test_missing_file(self, tmp_path):
        with pytest.raises(DatasetNotFound):
            load_model(str(tmp_path / "absent.itlm"))
