"""k-nearest-neighbor graphs, local PCA and connectivity helpers.

Neighbor sets are exact: ties in distance are broken by the lower point
index, and the spatial-index query is checked against an exhaustive scan.
"""

from __future__ import annotations

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

FloatArray = NDArray[np.float64]
IntArray = NDArray[np.int64]


def _as_cloud(points: ArrayLike) -> FloatArray:
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("expected an (n, 3) point array")
    return pts


def _sqdist(a: FloatArray, b: FloatArray) -> FloatArray:
    # single formula shared by the tree path and the exhaustive oracle so that
    # equal distances compare equal bit-for-bit
    d = a - b
    return d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2]


def _select(i: int, cand: IntArray, d2: FloatArray, k: int) -> IntArray:
    keep = cand != i
    cand, d2 = cand[keep], d2[keep]
    order = np.lexsort((cand, d2))
    return cand[order[:k]]


def knn_exhaustive(points: ArrayLike, k: int) -> IntArray:
    """O(n^2) reference k-NN (self excluded, ties by lower index)."""
    pts = _as_cloud(points)
    n = len(pts)
    if not 1 <= k < n:
        raise ValueError(f"k must satisfy 1 <= k < n (k={k}, n={n})")
    idx = np.arange(n)
    out = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        out[i] = _select(i, idx, _sqdist(pts, pts[i]), k)
    return out


def knn(points: ArrayLike, k: int, tree: cKDTree | None = None) -> IntArray:
    """k nearest neighbors of every point through a k-d tree.

    Returns an ``(n, k)`` array sorted by increasing distance. Ties are broken
    by the lower index, exactly as :func:`knn_exhaustive`.
    """
    pts = _as_cloud(points)
    n = len(pts)
    if not 1 <= k < n:
        raise ValueError(f"k must satisfy 1 <= k < n (k={k}, n={n})")
    tree = cKDTree(pts) if tree is None else tree
    m = min(n, k + 4)
    _, cand = tree.query(pts, k=m)
    cand = np.asarray(cand, dtype=np.int64).reshape(n, m)
    d2 = _sqdist(pts[cand], pts[:, None, :])
    out = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        sel = _select(i, cand[i], d2[i], k)
        kth = _sqdist(pts[sel[-1]], pts[i])
        # the candidate list may have been cut inside a tie group (or rounding
        # in the tree may differ from ours); widen to a radius query then
        if m < n and kth >= d2[i].max() * (1 - 1e-9):
            ball = np.asarray(tree.query_ball_point(pts[i], np.sqrt(kth) * (1 + 1e-9) + 1e-300), dtype=np.int64)
            sel = _select(i, ball, _sqdist(pts[ball], pts[i]), k)
        out[i] = sel
    return out


def local_pca(points: ArrayLike, graph: IntArray) -> tuple[FloatArray, FloatArray]:
    """Eigen-decomposition of each point's neighborhood covariance.

    The neighborhood is the point itself plus its graph neighbors. Returns
    ascending eigenvalues ``(n, 3)`` and eigenvectors ``(n, 3, 3)`` (columns).
    """
    pts = _as_cloud(points)
    nb = np.concatenate([np.arange(len(pts))[:, None], graph], axis=1)
    local = pts[nb]
    local = local - local.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", local, local) / nb.shape[1]
    evals, evecs = np.linalg.eigh(cov)
    return np.maximum(evals, 0.0), evecs


def estimate_normals(points: ArrayLike, k: int = 16, graph: IntArray | None = None) -> tuple[FloatArray, NDArray[np.bool_]]:
    """Unoriented unit normals by local plane fit over ``k`` neighbors.

    Returns
    -------
    normals : (n, 3) array
        Eigenvector of the smallest covariance eigenvalue.
    reliable : (n,) bool array
        False where the neighborhood is (nearly) collinear or coincident.
    """
    pts = _as_cloud(points)
    if k < 3:
        raise ValueError("normal estimation needs k >= 3")
    if len(pts) <= k:
        raise ValueError("cloud has fewer than k + 1 points")
    graph = knn(pts, k) if graph is None else graph
    evals, evecs = local_pca(pts, graph)
    normals = evecs[:, :, 0]
    scale = evals[:, 2]
    reliable = (scale > 0) & (evals[:, 1] > 1e-6 * scale)
    return normals, reliable


def surface_variation(points: ArrayLike, graph: IntArray) -> FloatArray:
    """``lambda_min / trace`` of each neighborhood covariance, in [0, 1/3]."""
    evals, _ = local_pca(points, graph)
    tr = evals.sum(axis=1)
    out = np.zeros(len(tr))
    ok = tr > 0
    out[ok] = evals[ok, 0] / tr[ok]
    return np.clip(out, 0.0, 1.0 / 3.0)


def graph_components(graph: IntArray, subset: ArrayLike | None = None) -> list[IntArray]:
    """Connected components of the symmetrized k-NN graph.

    With ``subset`` given, only edges between subset members count. Components
    come back as sorted index arrays, largest first (ties by smallest index).
    """
    n = len(graph)
    member = np.ones(n, dtype=bool) if subset is None else np.zeros(n, dtype=bool)
    if subset is not None:
        member[np.asarray(subset, dtype=np.int64)] = True
    rows = np.repeat(np.arange(n), graph.shape[1])
    cols = graph.reshape(-1)
    ok = member[rows] & member[cols]
    adj = coo_matrix((np.ones(int(ok.sum())), (rows[ok], cols[ok])), shape=(n, n))
    _, labels = connected_components(adj, directed=False)
    idx = np.flatnonzero(member)
    labels = labels[idx]
    comps = [idx[labels == lab] for lab in np.unique(labels)]
    comps.sort(key=lambda c: (-len(c), int(c[0])))
    return comps
