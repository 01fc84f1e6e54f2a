"""Encoding functions g: subvector -> bucket index in [0, 16).

``HashTree`` is the 4-comparison balanced regression tree, ``PqEncoder`` the
exact nearest-prototype baseline. Both expose ``encode(x_sub)``.
"""
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple, Union

import numpy as np
import scipy.sparse

from LookupMul.amm.linalg import as_matrix, kmeans, make_rng
from LookupMul.amm.partition import PartitionSpec
from LookupMul.config import Fitting
from LookupMul.exceptions import InvalidArgument, ShapeMismatch
from LookupMul.utils.logger import logger

K = Fitting.CODEBOOK_SIZE
DEPTH = 4
ENCODERS = ("hash", "pq")


@dataclass
class HashTree:
    split_dims: np.ndarray                 # (4,) one dimension per level
    thresholds: Tuple[np.ndarray, ...]     # level t holds 2**t thresholds
    comparisons: int = field(default=0, compare=False, repr=False)

    def __post_init__(self):
        self.split_dims = np.asarray(self.split_dims, dtype=np.int64)
        self.thresholds = tuple(np.asarray(t, dtype=np.float64) for t in self.thresholds)
        if self.split_dims.shape != (DEPTH,) or len(self.thresholds) != DEPTH:
            raise InvalidArgument("a hash tree has exactly 4 levels")
        for t, thr in enumerate(self.thresholds):
            if thr.shape != (2 ** t,):
                raise InvalidArgument(f"level {t} needs {2 ** t} thresholds, got {thr.shape}")

    def encode_row(self, row) -> int:
        node = 0
        for t in range(DEPTH):
            self.comparisons += 1
            bit = int(row[self.split_dims[t]] > self.thresholds[t][node])
            node = 2 * node + bit
        return node

    def encode(self, x_sub) -> np.ndarray:
        x_sub = np.asarray(x_sub, dtype=np.float64)
        node = np.zeros(x_sub.shape[0], dtype=np.int64)
        for t in range(DEPTH):
            bit = x_sub[:, self.split_dims[t]] > self.thresholds[t][node]
            node = 2 * node + bit
        return node.astype(np.uint8)


@dataclass
class PqEncoder:
    prototypes: np.ndarray   # K x d_c

    def encode(self, x_sub, block: int = 4096) -> np.ndarray:
        x_sub = np.asarray(x_sub, dtype=np.float64)
        codes = np.empty(x_sub.shape[0], dtype=np.uint8)
        for start in range(0, x_sub.shape[0], block):
            diff = x_sub[start:start + block, None, :] - self.prototypes[None, :, :]
            codes[start:start + block] = np.argmin(np.sum(diff * diff, axis=2), axis=1)
        return codes


Encoder = Union[HashTree, PqEncoder]


@dataclass
class Encoding:
    codes: np.ndarray   # N x C, entries < 16

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.uint8)
        if self.codes.ndim != 2:
            raise ShapeMismatch(f"codes must be N x C, got {self.codes.shape}")
        if self.codes.size and self.codes.max() >= K:
            raise InvalidArgument("code out of range")

    @property
    def num_rows(self) -> int:
        return int(self.codes.shape[0])

    @property
    def num_codebooks(self) -> int:
        return int(self.codes.shape[1])

    def one_hot(self, codebook=None) -> scipy.sparse.csr_matrix:
        """Sparse G: N x 16C (or N x 16 for a single codebook)."""
        n = self.num_rows
        if codebook is not None:
            cols = self.codes[:, codebook].astype(np.int64)
            width = K
        else:
            cols = (self.codes.astype(np.int64) + K * np.arange(self.num_codebooks)).ravel()
            width = K * self.num_codebooks
        rows = np.repeat(np.arange(n), cols.size // max(n, 1)) if n else np.zeros(0, dtype=np.int64)
        data = np.ones(cols.size)
        return scipy.sparse.csr_matrix((data, (rows, cols)), shape=(n, width))

    def bucket_counts(self) -> np.ndarray:
        """C x 16 number of rows per bucket."""
        return np.stack([np.bincount(self.codes[:, c], minlength=K)
                         for c in range(self.num_codebooks)]) if self.num_codebooks else np.zeros((0, K))


def _best_split(x_sorted, col_sorted, row_sq_sorted):
    """Two-sided SSE minimum for one bucket sorted along one dimension.

    Returns (threshold, sse); splits only between distinct values so that
    ``x > threshold`` reproduces the partition.
    """
    n = x_sorted.shape[0]
    total_sq = row_sq_sorted.sum()
    total_sum = x_sorted.sum(axis=0)
    whole_sse = max(0.0, total_sq - float(total_sum @ total_sum) / n)
    if n < 2 or col_sorted[0] == col_sorted[-1]:
        return float(col_sorted[-1]), whole_sse

    cum_x = np.cumsum(x_sorted, axis=0)[:-1]
    cum_sq = np.cumsum(row_sq_sorted)[:-1]
    left_n = np.arange(1, n)
    right_n = n - left_n
    right_x = total_sum - cum_x
    sse = (cum_sq - np.einsum("ij,ij->i", cum_x, cum_x) / left_n
           + (total_sq - cum_sq) - np.einsum("ij,ij->i", right_x, right_x) / right_n)
    sse[col_sorted[:-1] == col_sorted[1:]] = np.inf
    best = int(np.argmin(sse))
    thr = (col_sorted[best] + col_sorted[best + 1]) / 2.0
    return float(thr), float(max(0.0, sse[best]))


def learn_hash_tree(x_sub, rng=0, max_rows: int = None) -> Tuple[HashTree, np.ndarray]:
    """Greedy level-by-level regression tree with one split dim per level.

    Returns the tree and the 16 x d_c matrix of bucket means over all rows.
    """
    x_full = as_matrix(x_sub, "x_sub")
    n, d = x_full.shape
    if n < K:
        raise InvalidArgument(f"need at least {K} rows to learn a hash tree, got {n}")
    x = x_full
    if max_rows is not None and n > max_rows:
        rows = np.sort(make_rng(rng).choice(n, size=max_rows, replace=False))
        x = x_full[rows]
    row_sq = np.einsum("ij,ij->i", x, x)

    buckets = [np.arange(x.shape[0])]
    split_dims = np.zeros(DEPTH, dtype=np.int64)
    thresholds = []
    parent_thr = None
    for t in range(DEPTH):
        best = None
        for j in range(d):
            level_thr = np.empty(len(buckets))
            level_sse = 0.0
            for b, idx in enumerate(buckets):
                if idx.size == 0:
                    level_thr[b] = parent_thr[b // 2]
                    continue
                order = idx[np.argsort(x[idx, j], kind="stable")]
                level_thr[b], sse = _best_split(x[order], x[order, j], row_sq[order])
                level_sse += sse
            if best is None or level_sse < best[0]:
                best = (level_sse, j, level_thr)
        level_sse, j, level_thr = best
        split_dims[t] = j
        thresholds.append(level_thr)
        parent_thr = level_thr
        children = []
        for b, idx in enumerate(buckets):
            right = x[idx, j] > level_thr[b]
            children.extend([idx[~right], idx[right]])
        buckets = children
        logger.debug(f"hash tree level {t}: dim {j}, sse {level_sse:.6g}")

    tree = HashTree(split_dims, tuple(thresholds))
    codes = tree.encode(x_full)
    means = np.zeros((K, d))
    for k in range(K):
        members = x_full[codes == k]
        if members.shape[0]:
            means[k] = members.mean(axis=0)
    return tree, means


def encode_tree(tree: HashTree, x_sub_row) -> int:
    return tree.encode_row(np.asarray(x_sub_row, dtype=np.float64))


def learn_pq(x_sub, rng=0, iters: int = Fitting.KMEANS_ITERS) -> PqEncoder:
    x_sub = as_matrix(x_sub, "x_sub")
    if x_sub.shape[0] < K:
        raise InvalidArgument(f"need at least {K} rows to learn PQ prototypes, got {x_sub.shape[0]}")
    centroids, _ = kmeans(x_sub, K, rng, iters)
    return PqEncoder(centroids)


def encode_all(encoders: Sequence[Encoder], a, spec: PartitionSpec) -> Encoding:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != spec.dim:
        raise ShapeMismatch(f"input has shape {a.shape}, partition covers {spec.dim} dims")
    if len(encoders) != spec.num_chunks:
        raise ShapeMismatch(f"{len(encoders)} encoders for {spec.num_chunks} chunks")
    codes = np.zeros((a.shape[0], spec.num_chunks), dtype=np.uint8)
    for c, enc in enumerate(encoders):
        codes[:, c] = enc.encode(a[:, spec.chunk(c)])
    return Encoding(codes)


def learn_encoders(kind: str, a, spec: PartitionSpec, rng=0,
                   max_rows: int = Fitting.MAX_FIT_ROWS) -> Tuple[List[Encoder], List[np.ndarray]]:
    """One encoder per chunk plus each chunk's 16 x d_c initial prototypes."""
    if kind not in ENCODERS:
        raise InvalidArgument(f"unknown encoder {kind!r}, expected one of {ENCODERS}")
    a = as_matrix(a, "a")
    rng = make_rng(rng)
    fit_rows = a
    if max_rows is not None and a.shape[0] > max_rows:
        fit_rows = a[np.sort(rng.choice(a.shape[0], size=max_rows, replace=False))]

    encoders, prototypes = [], []
    for c in range(spec.num_chunks):
        cols = spec.chunk(c)
        if kind == "hash":
            tree, means = learn_hash_tree(a[:, cols], rng, max_rows=max_rows)
            encoders.append(tree)
            prototypes.append(means)
        else:
            enc = learn_pq(fit_rows[:, cols], rng)
            encoders.append(enc)
            prototypes.append(enc.prototypes.copy())
    logger.info(f"Learned {spec.num_chunks} {kind} encoders over {a.shape[1]} dims")
    return encoders, prototypes
