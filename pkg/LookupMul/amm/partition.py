"""Assigning the D input dimensions to C contiguous subspaces.

Three strategies produce a :class:`PartitionSpec`: ``naive`` (identity
order), ``opq`` (closest permutation to a learned OPQ rotation) and ``r2``
(optimal leaf order of a squared-correlation dendrogram).
"""
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy.cluster.hierarchy import linkage
from scipy.spatial.distance import squareform

from LookupMul.amm.linalg import as_matrix, hungarian_max, kmeans, make_rng, svd_square
from LookupMul.config import Fitting
from LookupMul.exceptions import DegenerateInput, InvalidArgument, ShapeMismatch
from LookupMul.utils.logger import logger

PARTITIONS = ("naive", "opq", "r2")


@dataclass(frozen=True)
class PartitionSpec:
    perm: np.ndarray
    boundaries: np.ndarray

    def __post_init__(self):
        perm = np.asarray(self.perm, dtype=np.int64)
        bounds = np.asarray(self.boundaries, dtype=np.int64)
        if not np.array_equal(np.sort(perm), np.arange(perm.size)):
            raise InvalidArgument("perm is not a permutation")
        if bounds.size < 2 or bounds[0] != 0 or bounds[-1] != perm.size or np.any(np.diff(bounds) <= 0):
            raise InvalidArgument(f"bad chunk boundaries {bounds.tolist()}")
        sizes = np.diff(bounds)
        if sizes.max() - sizes.min() > 1:
            raise InvalidArgument("chunk sizes must differ by at most one")
        object.__setattr__(self, "perm", perm)
        object.__setattr__(self, "boundaries", bounds)

    @property
    def dim(self) -> int:
        return int(self.perm.size)

    @property
    def num_chunks(self) -> int:
        return int(self.boundaries.size - 1)

    @property
    def chunk_sizes(self) -> np.ndarray:
        return np.diff(self.boundaries)

    def chunk(self, c: int) -> np.ndarray:
        """Original dimension indices that make up subspace ``c``."""
        return self.perm[self.boundaries[c]:self.boundaries[c + 1]]

    def chunks(self) -> List[np.ndarray]:
        return [self.chunk(c) for c in range(self.num_chunks)]

    def inverse(self) -> np.ndarray:
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(self.perm.size)
        return inv

    def permutation_matrix(self) -> np.ndarray:
        """Q with ``a @ Q == a[:, perm]``."""
        q = np.zeros((self.dim, self.dim))
        q[self.perm, np.arange(self.dim)] = 1.0
        return q


@dataclass(frozen=True)
class Dendrogram:
    """scipy linkage matrix over ``n_leaves`` leaves."""
    linkage: np.ndarray
    n_leaves: int

    @property
    def merges(self) -> List[Tuple[int, int, float]]:
        return [(int(l), int(r), float(h)) for l, r, h, _ in self.linkage]


def chunk_boundaries(d: int, c: int) -> np.ndarray:
    if c < 1 or c > d:
        raise InvalidArgument(f"need 1 <= c <= d, got c={c}, d={d}")
    # the first d mod c chunks take the extra dimension
    sizes = np.full(c, d // c, dtype=np.int64)
    sizes[: d % c] += 1
    return np.concatenate([[0], np.cumsum(sizes)])


def naive_partition(d: int, c: int) -> PartitionSpec:
    return PartitionSpec(np.arange(d), chunk_boundaries(d, c))


def _pq_fit_codebooks(y, bounds, k, rng, iters, init=None):
    recon = np.empty_like(y)
    centroids = []
    for c in range(bounds.size - 1):
        cols = slice(bounds[c], bounds[c + 1])
        seed = None if init is None else init[c]
        cents, labels = kmeans(y[:, cols], k, rng, iters, init=seed)
        centroids.append(cents)
        recon[:, cols] = cents[labels]
    return recon, centroids


def pq_distortion(a, c: int, k: int = Fitting.CODEBOOK_SIZE, rng=0,
                  iters: int = Fitting.KMEANS_ITERS) -> float:
    """Squared PQ reconstruction error of ``a`` under naive partitioning."""
    a = as_matrix(a, "a")
    recon, _ = _pq_fit_codebooks(a, chunk_boundaries(a.shape[1], c), k, make_rng(rng), iters)
    return float(np.sum((a - recon) ** 2))


def _opq_alternate(a, r, bounds, k, rng, iters, kmeans_iters, start: str):
    recon, centroids = _pq_fit_codebooks(a @ r, bounds, k, rng, kmeans_iters)
    best_r, best_err = r, float(np.sum((a @ r - recon) ** 2))
    for it in range(iters):
        u, _, vt = svd_square(a.T @ recon)
        r = u @ vt
        recon, centroids = _pq_fit_codebooks(a @ r, bounds, k, rng, kmeans_iters, init=centroids)
        err = float(np.sum((a @ r - recon) ** 2))
        logger.debug(f"OPQ ({start} start) iteration {it + 1}/{iters}: distortion {err:.6g}")
        if err <= best_err:
            best_r, best_err = r, err
    return best_r, best_err


def opq_fit(a, c: int, k: int = Fitting.CODEBOOK_SIZE, iters: int = Fitting.OPQ_ITERS,
            rng=0, kmeans_iters: int = Fitting.KMEANS_ITERS) -> np.ndarray:
    """Non-parametric OPQ: alternate PQ codebooks on A·R and Procrustes for R.

    Alternation runs from R = I and from the permutation that orders the
    dimensions by squared correlation; the rotation with the lower final
    distortion wins.
    """
    a = as_matrix(a, "a")
    n, d = a.shape
    if k > n:
        raise InvalidArgument(f"k={k} exceeds the {n} available rows")
    if np.all(a.var(axis=0) == 0):
        raise DegenerateInput("OPQ needs at least one dimension with variance")
    bounds = chunk_boundaries(d, c)
    rng = make_rng(rng)

    if iters == 0:
        return np.eye(d)
    starts = [("identity", np.eye(d))]
    if n >= 2 and bounds.size > 2:
        grouped = PartitionSpec(_correlation_order(a), bounds)
        if not np.array_equal(grouped.perm, np.arange(d)):
            starts.append(("correlation", grouped.permutation_matrix()))
    best_r, best_err = None, np.inf
    for name, r0 in starts:
        r, err = _opq_alternate(a, r0, bounds, k, rng, iters, kmeans_iters, name)
        logger.debug(f"OPQ {name} start finished at distortion {err:.6g}")
        if err < best_err:
            best_r, best_err = r, err
    return best_r


def permutation_from_rotation(r) -> np.ndarray:
    """Gather order ``perm`` such that ``a[:, perm]`` best mimics ``a @ r``.

    Solves max_Q sum_ij R_ij Q_ij; original dimension i matched to rotated
    dimension pi[i] lands at position pi[i].
    """
    match = hungarian_max(r)
    perm = np.empty_like(match)
    perm[match] = np.arange(match.size)
    return perm


def opq_partition(a, c: int, k: int = Fitting.CODEBOOK_SIZE, iters: int = Fitting.OPQ_ITERS,
                  rng=0) -> PartitionSpec:
    a = as_matrix(a, "a")
    rotation = opq_fit(a, c, k, iters, rng)
    return PartitionSpec(permutation_from_rotation(rotation), chunk_boundaries(a.shape[1], c))


def corr_squared(a) -> np.ndarray:
    """Squared Pearson correlation; zero-variance columns correlate with nothing."""
    a = as_matrix(a, "a")
    if a.shape[0] < 2:
        raise InvalidArgument("corr_squared needs at least two rows")
    centered = a - a.mean(axis=0)
    norms = np.sqrt(np.sum(centered * centered, axis=0))
    live = norms > 0
    scaled = np.zeros_like(centered)
    scaled[:, live] = centered[:, live] / norms[live]
    r2 = np.clip((scaled.T @ scaled) ** 2, 0.0, 1.0)
    np.fill_diagonal(r2, 1.0)
    return r2


def _check_distance(dist) -> np.ndarray:
    dist = as_matrix(dist, "dist")
    if dist.shape[0] != dist.shape[1]:
        raise ShapeMismatch(f"distance matrix must be square, got {dist.shape}")
    if not np.allclose(dist, dist.T, rtol=0, atol=1e-12):
        raise InvalidArgument("distance matrix is not symmetric")
    if np.any(dist < 0):
        raise InvalidArgument("distance matrix has negative entries")
    if np.any(np.diag(dist) != 0):
        raise InvalidArgument("distance matrix must have a zero diagonal")
    return dist


def agglomerate(dist) -> Dendrogram:
    dist = _check_distance(dist)
    n = dist.shape[0]
    if n < 2:
        return Dendrogram(np.zeros((0, 4)), n)
    z = linkage(squareform(dist, checks=False), method="average")
    return Dendrogram(z, n)


def _subtree_costs(dg: Dendrogram, dist: np.ndarray):
    """Bottom-up table of best path costs between the two end leaves of every subtree.

    For a merge of subtrees a and b, ``cost[p, q]`` is the cheapest order of
    the merged leaves running from local leaf p to local leaf q; p and q lie
    in different children, all other entries are inf.
    """
    n = dg.n_leaves
    members = {i: np.array([i], dtype=np.int64) for i in range(n)}
    cost = {i: np.zeros((1, 1)) for i in range(n)}
    back = {}
    for step, (left, right, _) in enumerate(dg.merges):
        la, lb = members.pop(left), members.pop(right)
        ma, mb = cost.pop(left), cost.pop(right)
        na, nb = la.size, lb.size
        cross = dist[np.ix_(la, lb)]
        cols = np.arange(nb)
        merged = np.full((na + nb, na + nb), np.inf)
        end_a = np.empty((na, nb), dtype=np.int64)
        start_b = np.empty((na, nb), dtype=np.int64)
        for i in range(na):
            # via[k, m]: start at i, leave a through k, enter b at m
            via = ma[i][:, None] + cross
            k = np.argmin(via, axis=0)
            total = via[k, cols][:, None] + mb
            m = np.argmin(total, axis=0)
            merged[i, na:] = total[m, cols]
            end_a[i] = k[m]
            start_b[i] = m
        merged[na:, :na] = merged[:na, na:].T
        node = n + step
        members[node] = np.concatenate([la, lb])
        cost[node] = merged
        back[node] = (left, right, na, end_a, start_b)
    return cost[2 * n - 2], back


def leaf_order(dg: Dendrogram, dist) -> np.ndarray:
    """Tree-consistent leaf order minimizing the summed successive distances.

    Exact dynamic program over the dendrogram. Of an optimal order and its
    reverse, the one starting with the smaller leaf index is returned.
    """
    dist = _check_distance(dist)
    n = dg.n_leaves
    if dist.shape[0] != n:
        raise ShapeMismatch(f"dendrogram has {n} leaves, distances cover {dist.shape[0]}")
    if n < 2:
        return np.arange(n)
    if len(dg.merges) != n - 1:
        raise InvalidArgument(f"dendrogram over {n} leaves needs {n - 1} merges, has {len(dg.merges)}")

    root_cost, back = _subtree_costs(dg, dist)
    upper = np.where(np.triu(np.ones_like(root_cost, dtype=bool), 1), root_cost, np.inf)
    p, q = np.unravel_index(np.argmin(upper), upper.shape)

    order = []
    stack = [(2 * n - 2, int(p), int(q))]
    while stack:
        node, start, end = stack.pop()
        if node < n:
            order.append(node)
            continue
        left, right, na, end_a, start_b = back[node]
        if start < na:
            i, j = start, end - na
            stack.append((right, int(start_b[i, j]), j))
            stack.append((left, i, int(end_a[i, j])))
        else:
            # walking the merge backwards: b from its end, then a back to its start
            i, j = end, start - na
            stack.append((left, int(end_a[i, j]), i))
            stack.append((right, j, int(start_b[i, j])))
    order = np.asarray(order, dtype=np.int64)
    if order[0] > order[-1]:
        order = order[::-1].copy()
    return order


def leaf_order_cost(order, dist) -> float:
    order = np.asarray(order)
    return float(np.sum(np.asarray(dist)[order[:-1], order[1:]]))


def _correlation_order(a: np.ndarray) -> np.ndarray:
    dist = 1.0 - corr_squared(a)
    np.fill_diagonal(dist, 0.0)
    dist = np.maximum(dist, 0.0)
    dist = (dist + dist.T) / 2
    return leaf_order(agglomerate(dist), dist)


def r2_partition(a, c: int) -> PartitionSpec:
    a = as_matrix(a, "a")
    return PartitionSpec(_correlation_order(a), chunk_boundaries(a.shape[1], c))


def make_partition(kind: str, a, c: int, rng=0, k: int = Fitting.CODEBOOK_SIZE,
                   iters: int = Fitting.OPQ_ITERS) -> PartitionSpec:
    if kind == "naive":
        return naive_partition(np.shape(a)[1], c)
    if kind == "opq":
        return opq_partition(a, c, k, iters, rng)
    if kind == "r2":
        return r2_partition(a, c)
    raise InvalidArgument(f"unknown partition strategy {kind!r}, expected one of {PARTITIONS}")
