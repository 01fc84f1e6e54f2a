"""Dense linear algebra shared by every fitting routine.

All fitting happens in float64. Inputs are validated once here so that the
higher level modules can assume 2-D finite arrays.
"""
import warnings
from collections import deque
from typing import NamedTuple

import numpy as np
import scipy.linalg
import scipy.sparse
from scipy.optimize import linear_sum_assignment
from sklearn.cluster import KMeans
from sklearn.exceptions import ConvergenceWarning

from LookupMul.exceptions import DegenerateInput, InvalidArgument, ShapeMismatch, SingularSystem

TIE_TOLERANCE = 1e-9


def make_rng(seed) -> np.random.Generator:
    """PCG64 stream; the same seed gives the same stream everywhere."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.Generator(np.random.PCG64(int(seed)))


def as_matrix(x, name="matrix", dtype=np.float64) -> np.ndarray:
    arr = np.asarray(x, dtype=dtype)
    if arr.ndim != 2:
        raise ShapeMismatch(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DegenerateInput(f"{name} contains non-finite entries")
    return arr


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def _gram(g):
    if scipy.sparse.issparse(g):
        return np.asarray((g.T @ g).toarray(), dtype=np.float64)
    return g.T @ g


def _cross(g, y):
    return np.asarray(g.T @ y, dtype=np.float64)


def ridge_solve(g, y, lam: float, p0) -> np.ndarray:
    """argmin_P ||Y - GP||^2 + lam ||P - P0||^2.

    ``g`` may be dense or a scipy sparse matrix (one-hot encodings are).
    """
    if not scipy.sparse.issparse(g):
        g = as_matrix(g, "g")
    y = as_matrix(y, "y")
    p0 = as_matrix(p0, "p0")
    if g.shape[0] != y.shape[0]:
        raise ShapeMismatch(f"g has {g.shape[0]} rows but y has {y.shape[0]}")
    if p0.shape != (g.shape[1], y.shape[1]):
        raise ShapeMismatch(f"p0 must be {(g.shape[1], y.shape[1])}, got {p0.shape}")
    if lam < 0:
        raise InvalidArgument(f"lambda must be non-negative, got {lam}")

    lhs = _gram(g) + lam * np.eye(g.shape[1])
    rhs = _cross(g, y) + lam * p0
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
            return scipy.linalg.solve(lhs, rhs, assume_a="pos" if lam > 0 else "sym")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning) as e:
        raise SingularSystem(f"normal equations are singular at lambda={lam}: {e}")


class KMeansResult(NamedTuple):
    centroids: np.ndarray
    assignments: np.ndarray


def kmeans(x, k: int, rng, iters: int, init=None) -> KMeansResult:
    """Lloyd iterations from k-means++ seeding (or from ``init``).

    Empty clusters are relocated to the points farthest from their centroid.
    """
    x = as_matrix(x, "x")
    if x.shape[0] == 0:
        raise DegenerateInput("kmeans needs at least one row")
    if k < 1 or k > x.shape[0]:
        raise InvalidArgument(f"k={k} must lie in [1, {x.shape[0]}]")
    if iters < 1:
        raise InvalidArgument("kmeans needs at least one iteration")

    rng = make_rng(rng)
    model = KMeans(
        n_clusters=k,
        init="k-means++" if init is None else np.asarray(init, dtype=np.float64),
        n_init=1,
        max_iter=iters,
        tol=0.0,
        algorithm="lloyd",
        random_state=int(rng.integers(2**31 - 1)),
    )
    with warnings.catch_warnings():
        # duplicate points leave fewer distinct clusters than k
        warnings.simplefilter("ignore", ConvergenceWarning)
        model.fit(x)
    return KMeansResult(np.asarray(model.cluster_centers_, dtype=np.float64),
                        np.asarray(model.labels_, dtype=np.int64))


def kmeans_objective(x, centroids, assignments) -> float:
    diff = np.asarray(x, dtype=np.float64) - centroids[assignments]
    return float(np.sum(diff * diff))


def svd_square(m):
    m = as_matrix(m, "m")
    if m.shape[0] != m.shape[1]:
        raise ShapeMismatch(f"svd_square expects a square matrix, got {m.shape}")
    u, s, vt = np.linalg.svd(m)
    return u, s, vt


def _assignment_slack(w: np.ndarray, perm: np.ndarray) -> np.ndarray:
    """Reduced costs of every (row, column) pair against an optimal ``perm``.

    Row potentials come from Bellman-Ford on the exchange graph (row r taking
    the column of row s); an optimal assignment has no negative cycle there.
    Zero slack marks exactly the pairs some optimal assignment may use.
    """
    n = w.shape[0]
    owner_gain = w[np.arange(n), perm]
    # exchange[r, s]: loss when row r takes row s's column
    exchange = owner_gain[None, :] - w[:, perm]
    dist = np.zeros(n)
    for _ in range(n):
        relaxed = np.minimum(dist, (dist[:, None] + exchange).min(axis=0))
        if np.array_equal(relaxed, dist):
            break
        dist = relaxed
    owner = np.empty(n, dtype=np.int64)
    owner[perm] = np.arange(n)
    return exchange[:, owner] + dist[:, None] - dist[owner][None, :]


def _reroute(tight: np.ndarray, perm: np.ndarray, owner: np.ndarray, row: int, col: int) -> bool:
    """Move ``row`` onto ``col`` along tight pairs, keeping earlier rows fixed."""
    target = perm[row]
    first = owner[col]
    parent = {first: None}
    queue = deque([first])
    while queue:
        r = queue.popleft()
        if tight[r, target]:
            moves = {row: col, r: target}
            while parent[r] is not None:
                prev, via = parent[r]
                moves[prev] = via
                r = prev
            for mover, c in moves.items():
                perm[mover] = c
                owner[c] = mover
            return True
        for c in np.flatnonzero(tight[r]):
            nxt = owner[c]
            if c == perm[r] or nxt <= row or nxt in parent:
                continue
            parent[nxt] = (r, c)
            queue.append(nxt)
    return False


def hungarian_max(w) -> np.ndarray:
    """Permutation pi maximizing sum_i w[i, pi[i]].

    Among equal-value optima the lexicographically smallest pi is returned.
    """
    w = as_matrix(w, "w")
    if w.shape[0] != w.shape[1]:
        raise ShapeMismatch(f"hungarian_max expects a square matrix, got {w.shape}")
    n = w.shape[0]
    rows, cols = linear_sum_assignment(w, maximize=True)
    perm = np.empty(n, dtype=np.int64)
    perm[rows] = cols
    if n < 2:
        return perm

    tol = TIE_TOLERANCE * max(1.0, float(np.abs(w).max()))
    tight = _assignment_slack(w, perm) <= tol
    if np.count_nonzero(tight) == n:
        return perm
    owner = np.empty(n, dtype=np.int64)
    owner[perm] = np.arange(n)
    for i in range(n):
        for j in np.flatnonzero(tight[i]):
            if j >= perm[i]:
                break
            if owner[j] < i:
                continue
            if _reroute(tight, perm, owner, i, j):
                break
    return perm
