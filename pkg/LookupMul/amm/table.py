"""Lookup tables: building, optimizing, quantizing and executing them.

A replaced layer computes ``sigma(sum_c T[c, code_c] + bias)``. The table is
either the prototype baseline ``T = P B`` with P fitted to reconstruct the
inputs, or fitted directly against the layer outputs.
"""
import dataclasses
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Tuple

import numpy as np
import scipy.linalg

from LookupMul.amm.activations import ACTIVATIONS, activate, log_softmax
from LookupMul.amm.encoder import Encoder, Encoding, K, encode_all, learn_encoders
from LookupMul.amm.linalg import as_matrix, make_rng, ridge_solve
from LookupMul.amm.partition import PartitionSpec, make_partition
from LookupMul.config import Fitting
from LookupMul.exceptions import InvalidArgument, NumericalFailure, ShapeMismatch, SingularSystem
from LookupMul.utils.logger import logger

OBJECTIVES = ("mse", "kld")
METHODS = ("prototype", "table")


@dataclass
class FitConfig:
    lam: float = Fitting.LAMBDA
    objective: str = "mse"
    nonlinearity: str = "identity"
    opt_steps: int = Fitting.OPT_STEPS
    learn_rate: float = Fitting.LEARN_RATE
    method: str = "table"
    encoder: str = "hash"
    quantize: bool = Fitting.QUANTIZE
    max_fit_rows: Optional[int] = Fitting.MAX_FIT_ROWS

    def validate(self) -> "FitConfig":
        if self.lam < 0:
            raise InvalidArgument(f"lambda must be non-negative, got {self.lam}")
        if self.objective not in OBJECTIVES:
            raise InvalidArgument(f"unknown objective {self.objective!r}")
        if self.nonlinearity not in ACTIVATIONS:
            raise InvalidArgument(f"unknown nonlinearity {self.nonlinearity!r}")
        if self.objective == "kld" and self.nonlinearity != "softmax":
            raise InvalidArgument("the KLD objective requires a softmax nonlinearity")
        if self.method not in METHODS:
            raise InvalidArgument(f"unknown method {self.method!r}, expected one of {METHODS}")
        if self.opt_steps < 0 or self.learn_rate <= 0:
            raise InvalidArgument("opt_steps must be >= 0 and learn_rate > 0")
        return self

    def for_layer(self, nonlinearity: str) -> "FitConfig":
        """Bind to a layer's activation; KLD only applies to softmax layers."""
        objective = self.objective if nonlinearity == "softmax" else "mse"
        return dataclasses.replace(self, nonlinearity=nonlinearity, objective=objective).validate()


@dataclass
class PrototypeSet:
    spec: PartitionSpec
    p: List[np.ndarray]    # per chunk K x d_c
    p0: List[np.ndarray]

    def dense(self, initial: bool = False) -> np.ndarray:
        """Block-structured KC x D matrix in original dimension order."""
        blocks = self.p0 if initial else self.p
        out = np.zeros((K * self.spec.num_chunks, self.spec.dim))
        for c, block in enumerate(blocks):
            out[c * K:(c + 1) * K, self.spec.chunk(c)] = block
        return out


@dataclass
class LookupTable:
    t: np.ndarray                      # C x K x M
    q: Optional[np.ndarray] = None     # C x K x M uint8
    scale: Optional[np.ndarray] = None
    offset: Optional[np.ndarray] = None

    @property
    def quantized(self) -> bool:
        return self.q is not None

    @property
    def shape(self) -> Tuple[int, int, int]:
        return tuple(self.t.shape)

    def flat(self) -> np.ndarray:
        return self.t.reshape(-1, self.t.shape[2])

    def dequantized(self) -> np.ndarray:
        if not self.quantized:
            raise InvalidArgument("table is not quantized")
        return self.q.astype(np.float64) * self.scale + self.offset


@dataclass
class AmmOperator:
    spec: PartitionSpec
    encoders: List[Encoder]
    table: LookupTable
    bias: np.ndarray
    nonlinearity: str = "identity"
    use_quantized: bool = False

    def __post_init__(self):
        c, k, m = self.table.shape
        if c != self.spec.num_chunks or k != K or len(self.encoders) != c:
            raise ShapeMismatch(f"table {self.table.shape} does not match {self.spec.num_chunks} codebooks")
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.bias.shape != (m,):
            raise ShapeMismatch(f"bias must have {m} entries, got {self.bias.shape}")

    @property
    def in_dim(self) -> int:
        return self.spec.dim

    @property
    def out_dim(self) -> int:
        return self.table.shape[2]

    @property
    def num_codebooks(self) -> int:
        return self.spec.num_chunks

    def encode(self, a) -> Encoding:
        return encode_all(self.encoders, a, self.spec)

    def apply(self, a) -> np.ndarray:
        return amm_apply(self, a, self.use_quantized)


def _check_encoding(a, g: Encoding, spec: PartitionSpec):
    if g.num_rows != a.shape[0]:
        raise ShapeMismatch(f"encoding has {g.num_rows} rows, inputs have {a.shape[0]}")
    if g.num_codebooks != spec.num_chunks:
        raise ShapeMismatch(f"encoding has {g.num_codebooks} codebooks, partition {spec.num_chunks}")


def optimize_prototypes(a, g: Encoding, p0: PrototypeSet, lam: float) -> PrototypeSet:
    """argmin_P ||A - GP||^2 + lam ||P - P0||^2, solved chunk by chunk."""
    a = as_matrix(a, "a")
    spec = p0.spec
    _check_encoding(a, g, spec)
    if a.shape[1] != spec.dim:
        raise ShapeMismatch(f"inputs have {a.shape[1]} dims, partition covers {spec.dim}")
    counts = g.bucket_counts()
    if lam == 0 and np.any(counts == 0):
        raise SingularSystem("empty buckets make the prototype system singular at lambda=0; use lambda > 0")
    blocks = []
    for c in range(spec.num_chunks):
        blocks.append(ridge_solve(g.one_hot(c), a[:, spec.chunk(c)], lam, p0.p0[c]))
    return PrototypeSet(spec, blocks, p0.p0)


def build_lut(p: PrototypeSet, b) -> LookupTable:
    b = as_matrix(b, "b")
    spec = p.spec
    if b.shape[0] != spec.dim:
        raise ShapeMismatch(f"weights have {b.shape[0]} rows, prototypes cover {spec.dim} dims")
    t = np.stack([p.p[c] @ b[spec.chunk(c)] for c in range(spec.num_chunks)])
    return LookupTable(t)


class LutObjective:
    """J(T) = loss(sigma(AB + bias), sigma(GT + bias)) + lam ||T - P0 B||^2."""

    def __init__(self, a, b, g: Encoding, p0: PrototypeSet, bias, cfg: FitConfig):
        self.cfg = cfg.validate()
        a = as_matrix(a, "a")
        b = as_matrix(b, "b")
        _check_encoding(a, g, p0.spec)
        self.bias = np.asarray(bias, dtype=np.float64)
        if self.bias.shape != (b.shape[1],):
            raise ShapeMismatch(f"bias must have {b.shape[1]} entries")
        self.g = g.one_hot()
        self.counts = g.bucket_counts().ravel()
        self.num_codebooks = g.num_codebooks
        self.exact = a @ b
        pre = self.exact + self.bias
        if cfg.objective == "kld":
            self.log_target = log_softmax(pre)
            self.target = np.exp(self.log_target)
        else:
            self.target = activate(pre, cfg.nonlinearity)
        self.t0 = build_lut(PrototypeSet(p0.spec, p0.p0, p0.p0), b).flat()

    @property
    def table_shape(self):
        return (self.num_codebooks, K, self.t0.shape[1])

    def _pre(self, t):
        return np.asarray(self.g @ t) + self.bias

    def value_and_gradient(self, t, with_grad: bool = True):
        cfg = self.cfg
        z = self._pre(t)
        diff_t = t - self.t0
        reg = cfg.lam * float(np.sum(diff_t * diff_t))
        if cfg.objective == "kld":
            log_q = log_softmax(z)
            loss = float(np.sum(self.target * (self.log_target - log_q)))
            dz = np.exp(log_q) - self.target if with_grad else None
        else:
            s = activate(z, cfg.nonlinearity)
            r = s - self.target
            loss = float(np.sum(r * r))
            dz = None
            if with_grad:
                if cfg.nonlinearity == "identity":
                    dz = 2 * r
                elif cfg.nonlinearity == "relu":
                    dz = 2 * r * (z > 0)
                else:
                    u = 2 * r
                    dz = s * (u - np.sum(u * s, axis=1, keepdims=True))
        value = loss + reg
        if not with_grad:
            return value, None
        grad = np.asarray(self.g.T @ dz) + 2 * cfg.lam * diff_t
        return value, grad

    def value(self, t) -> float:
        return self.value_and_gradient(t, with_grad=False)[0]

    def gradient(self, t) -> np.ndarray:
        return self.value_and_gradient(t)[1]

    def curvature_bound(self) -> np.ndarray:
        """Per table row Gershgorin bound on the Hessian of J."""
        scale = 1.0 if self.cfg.objective == "kld" else 2.0
        bound = scale * self.num_codebooks * self.counts + 2 * self.cfg.lam
        bound[bound == 0] = 1.0
        return bound

    def closed_form(self) -> np.ndarray:
        """Identity + MSE: ridge solution, or least squares at lambda = 0."""
        if self.cfg.lam > 0:
            return ridge_solve(self.g, self.exact, self.cfg.lam, self.t0)
        gram = np.asarray((self.g.T @ self.g).toarray())
        return scipy.linalg.pinvh(gram) @ np.asarray(self.g.T @ self.exact)


def optimize_lut(a, b, g: Encoding, p0: PrototypeSet, bias, cfg: FitConfig) -> LookupTable:
    """Fit T against the layer outputs; returns the best iterate seen."""
    objective = LutObjective(a, b, g, p0, bias, cfg)
    t = objective.t0.copy()
    best_t, best_j = t, objective.value(t)
    if not np.isfinite(best_j):
        raise NumericalFailure("table objective is not finite at the initial table")
    if cfg.nonlinearity == "identity" and cfg.objective == "mse":
        candidate = objective.closed_form()
        j = objective.value(candidate)
        if j <= best_j:
            best_t, best_j = candidate, j
        return LookupTable(best_t.reshape(objective.table_shape))

    step = cfg.learn_rate / objective.curvature_bound()[:, None]
    start_j = best_j
    for it in range(cfg.opt_steps):
        j, grad = objective.value_and_gradient(t)
        if not np.isfinite(j):
            raise NumericalFailure(f"table objective diverged at step {it}")
        if j < best_j:
            best_t, best_j = t, j
        t = t - step * grad
    j = objective.value(t)
    if np.isfinite(j) and j < best_j:
        best_t, best_j = t, j
    logger.debug(f"table optimization ({cfg.objective}/{cfg.nonlinearity}): {start_j:.6g} -> {best_j:.6g}")
    return LookupTable(best_t.reshape(objective.table_shape))


def quantize_lut(table: LookupTable) -> LookupTable:
    """8-bit entries with one scale and offset per output column."""
    t = np.asarray(table.t, dtype=np.float64)
    if not np.all(np.isfinite(t)):
        raise NumericalFailure("cannot quantize a table with non-finite entries")
    offset = t.min(axis=(0, 1))
    span = t.max(axis=(0, 1)) - offset
    scale = np.where(span > 0, span / 255.0, 1.0)
    q = np.clip(np.rint((t - offset) / scale), 0, 255).astype(np.uint8)
    return LookupTable(t, q, scale, offset)


def amm_apply(op: AmmOperator, a, use_quantized: bool = False) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != op.in_dim:
        raise ShapeMismatch(f"input has shape {a.shape}, operator expects {op.in_dim} columns")
    codes = op.encode(a).codes
    c_count, _, m = op.table.shape
    if use_quantized:
        if not op.table.quantized:
            raise InvalidArgument("operator table is not quantized")
        acc = np.zeros((a.shape[0], m), dtype=np.int64)
        for c in range(c_count):
            acc += op.table.q[c][codes[:, c]]
        pre = acc * op.table.scale + c_count * op.table.offset
    else:
        pre = np.zeros((a.shape[0], m))
        for c in range(c_count):
            pre += op.table.t[c][codes[:, c]]
    return activate(pre + op.bias, op.nonlinearity)


class CostEstimate(NamedTuple):
    amm_cost: float
    exact_cost: float
    breakeven_c: float


def lac_cost_model(d: int, m: int, c: int, ratio: float) -> CostEstimate:
    """Per-row cost in MAC units: 4 comparisons plus m lookups per codebook."""
    if ratio <= 0:
        raise InvalidArgument(f"MAC/LAC cost ratio must be positive, got {ratio}")
    exact = float(d * m)
    amm = (4.0 * c + c * m) / ratio
    return CostEstimate(amm, exact, d * m * ratio / (4.0 + m))


def storage_bytes(d: int, m: int, c: int) -> Tuple[int, int]:
    """(float32 weight bytes, 8-bit table bytes)."""
    return 4 * d * m, K * c * m


def fit_operator(a, b, bias, c: int, partition: str, cfg: FitConfig, rng=0) -> AmmOperator:
    """Partition, learn encoders and fit the table for one layer."""
    cfg = cfg.validate()
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"inputs have {a.shape[1]} dims, weights {b.shape[0]} rows")
    if c > a.shape[1]:
        raise InvalidArgument(f"{c} codebooks exceed the {a.shape[1]} input dims")
    rng = make_rng(rng)
    sample = a
    if cfg.max_fit_rows is not None and a.shape[0] > cfg.max_fit_rows:
        sample = a[np.sort(rng.choice(a.shape[0], size=cfg.max_fit_rows, replace=False))]

    spec = make_partition(partition, sample, c, rng=rng)
    encoders, prototypes = learn_encoders(cfg.encoder, a, spec, rng, max_rows=cfg.max_fit_rows)
    g = encode_all(encoders, a, spec)
    p0 = PrototypeSet(spec, prototypes, prototypes)
    if cfg.method == "prototype":
        table = build_lut(optimize_prototypes(a, g, p0, cfg.lam), b)
    else:
        table = optimize_lut(a, b, g, p0, bias, cfg)
    if cfg.quantize:
        table = quantize_lut(table)
    logger.info(f"Fitted {c}-codebook operator ({partition}/{cfg.encoder}/{cfg.method}"
                f"/{cfg.objective}) for a {b.shape[0]}x{b.shape[1]} layer")
    return AmmOperator(spec, encoders, table, bias, cfg.nonlinearity, use_quantized=cfg.quantize)
