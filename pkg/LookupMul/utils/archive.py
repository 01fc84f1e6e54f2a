"""ITLM v1 model archives.

Layout, all little-endian::

    "ITLM" | u32 version | u32 section count
    per section: u32 kind | u64 length | payload
    u32 CRC-32 of everything before it

Arrays inside payloads are written as ``u8 dtype code | u8 ndim | u64 dims |
raw bytes`` so floats round-trip at full width.
"""
import io
import json
import struct
import zlib
import numpy as np

from LookupMul.amm.encoder import HashTree, PqEncoder
from LookupMul.amm.partition import PartitionSpec
from LookupMul.amm.table import AmmOperator, LookupTable
from LookupMul.exceptions import BadMagic, ChecksumError, DatasetNotFound, TruncatedFile, VersionError
from LookupMul.nn.model import DenseLayer, MlpModel
from LookupMul.utils.logger import logger

MAGIC = b"ITLM"
VERSION = 1

SECTION_METADATA = 1
SECTION_DENSE = 2
SECTION_AMM = 3

ENCODER_HASH = 1
ENCODER_PQ = 2

_DTYPES = {1: "<f8", 2: "<i8", 3: "u1", 4: "<f4"}
_CODES = {np.dtype(v).str: k for k, v in _DTYPES.items()}


class _Writer:
    def __init__(self):
        self.buf = io.BytesIO()

    def u8(self, v):
        self.buf.write(struct.pack("<B", v))

    def u32(self, v):
        self.buf.write(struct.pack("<I", v))

    def text(self, s: str):
        raw = s.encode("utf-8")
        self.u32(len(raw))
        self.buf.write(raw)

    def array(self, arr):
        arr = np.asarray(arr)
        dtype = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        code = _CODES[np.dtype(dtype).str]
        self.u8(code)
        self.u8(arr.ndim)
        for n in arr.shape:
            self.buf.write(struct.pack("<Q", n))
        self.buf.write(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())

    def getvalue(self) -> bytes:
        return self.buf.getvalue()


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise TruncatedFile(f"archive payload ends after {len(self.raw)} bytes, needed {self.pos + n}")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return struct.unpack("<B", self.take(1))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def text(self) -> str:
        return self.take(self.u32()).decode("utf-8")

    def array(self) -> np.ndarray:
        code = self.u8()
        if code not in _DTYPES:
            raise VersionError(f"unknown array dtype code {code}")
        shape = tuple(self.u64() for _ in range(self.u8()))
        dtype = np.dtype(_DTYPES[code])
        count = int(np.prod(shape)) if shape else 1
        return np.frombuffer(self.take(count * dtype.itemsize), dtype=dtype).reshape(shape).copy()


def _dense_payload(layer: DenseLayer) -> bytes:
    w = _Writer()
    w.text(layer.activation)
    w.array(layer.weights)
    w.array(layer.bias)
    return w.getvalue()


def _amm_payload(op: AmmOperator) -> bytes:
    w = _Writer()
    w.text(op.nonlinearity)
    w.u8(int(op.use_quantized))
    w.array(op.spec.perm)
    w.array(op.spec.boundaries)
    w.u32(len(op.encoders))
    for enc in op.encoders:
        if isinstance(enc, HashTree):
            w.u8(ENCODER_HASH)
            w.array(enc.split_dims)
            for thr in enc.thresholds:
                w.array(thr)
        else:
            w.u8(ENCODER_PQ)
            w.array(enc.prototypes)
    w.array(op.table.t)
    w.u8(int(op.table.quantized))
    if op.table.quantized:
        w.array(op.table.q)
        w.array(op.table.scale)
        w.array(op.table.offset)
    w.array(op.bias)
    return w.getvalue()


def _read_dense(r: _Reader) -> DenseLayer:
    activation = r.text()
    return DenseLayer(r.array(), r.array(), activation)


def _read_amm(r: _Reader) -> AmmOperator:
    nonlinearity = r.text()
    use_quantized = bool(r.u8())
    spec = PartitionSpec(r.array(), r.array())
    encoders = []
    for _ in range(r.u32()):
        kind = r.u8()
        if kind == ENCODER_HASH:
            split_dims = r.array()
            encoders.append(HashTree(split_dims, tuple(r.array() for _ in range(4))))
        elif kind == ENCODER_PQ:
            encoders.append(PqEncoder(r.array()))
        else:
            raise VersionError(f"unknown encoder kind {kind}")
    t = r.array()
    table = LookupTable(t)
    if r.u8():
        table = LookupTable(t, r.array(), r.array(), r.array())
    return AmmOperator(spec, encoders, table, r.array(), nonlinearity, use_quantized)


def dumps(model: MlpModel) -> bytes:
    sections = [(SECTION_METADATA, json.dumps(model.metadata, sort_keys=True).encode("utf-8"))]
    for layer in model.layers:
        if isinstance(layer, AmmOperator):
            sections.append((SECTION_AMM, _amm_payload(layer)))
        else:
            sections.append((SECTION_DENSE, _dense_payload(layer)))

    body = io.BytesIO()
    body.write(MAGIC)
    body.write(struct.pack("<II", VERSION, len(sections)))
    for kind, payload in sections:
        body.write(struct.pack("<IQ", kind, len(payload)))
        body.write(payload)
    raw = body.getvalue()
    return raw + struct.pack("<I", zlib.crc32(raw) & 0xFFFFFFFF)


def loads(raw: bytes) -> MlpModel:
    if len(raw) < 16:
        raise TruncatedFile(f"archive is only {len(raw)} bytes long")
    if raw[:4] != MAGIC:
        raise BadMagic(f"archive magic {raw[:4]!r}, expected {MAGIC!r}")
    payload, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise ChecksumError("archive CRC-32 does not match its contents")

    r = _Reader(payload)
    r.take(4)
    version = r.u32()
    if version != VERSION:
        raise VersionError(f"archive version {version}, this build reads version {VERSION}")
    metadata, layers = {}, []
    for _ in range(r.u32()):
        kind = r.u32()
        section = _Reader(r.take(r.u64()))
        if kind == SECTION_METADATA:
            metadata = json.loads(section.raw.decode("utf-8"))
        elif kind == SECTION_DENSE:
            layers.append(_read_dense(section))
        elif kind == SECTION_AMM:
            layers.append(_read_amm(section))
        else:
            raise VersionError(f"unknown section type {kind} for archive version {version}")
    if r.pos != len(payload):
        raise TruncatedFile(f"{len(payload) - r.pos} trailing bytes after the last section")
    return MlpModel(layers, metadata)


def save_model(path: str, model: MlpModel) -> int:
    raw = dumps(model)
    with open(path, "wb") as f:
        f.write(raw)
    logger.info(f"Saved {model.num_layers}-layer model to {path}")
    return len(raw)


def load_model(path: str) -> MlpModel:
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except FileNotFoundError:
        raise DatasetNotFound(f"Model archive not found: {path}")
    return loads(raw)
