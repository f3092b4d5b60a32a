"""Exact k-nearest-neighbour graph construction with self-loops.

Distances are squared Euclidean, accumulated in float64 regardless of the
input dtype; ties are broken by ascending source index. Output is canonical
(sorted by target, then source), so results are independent of the search
path taken. Small clouds use a direct scan; larger ones use a k-d tree in
low dimension or a Gram-matrix candidate search, both refined with exact
distances so all paths agree bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

# Direct-scan threshold and candidate slack for the accelerated paths.
_BRUTE_MAX_N = 64
_KDTREE_MAX_DIM = 8
_CANDIDATE_SLACK = 8


@dataclass(frozen=True)
class EdgeList:
    """Directed edges (target, source); each target has k neighbours + a self-loop."""

    targets: np.ndarray
    sources: np.ndarray
    k: int

    def __len__(self) -> int:
        return len(self.targets)

    def neighbours(self) -> np.ndarray:
        """(N, k+1) source indices per target, in canonical (sorted) order."""
        n = len(self.targets) // (self.k + 1)
        return self.sources.reshape(n, self.k + 1)


def _exact_sq_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Difference-based squared distances in float64 (the reference formula)."""
    diff = a.astype(np.float64) - b.astype(np.float64)
    return np.einsum("...i,...i->...", diff, diff)


def _validate(features: np.ndarray, k: int) -> np.ndarray:
    features = np.asarray(features)
    if features.ndim != 2:
        raise ValueError(f"features must be 2-D, got shape {features.shape}")
    n = features.shape[0]
    if not 1 <= k <= n - 1:
        raise ValueError(f"k must satisfy 1 <= k <= N-1 = {n - 1}, got {k}")
    if not np.all(np.isfinite(features)):
        raise ValueError("features contain non-finite values")
    return features


def _neighbours_direct(features: np.ndarray, k: int) -> np.ndarray:
    n = features.shape[0]
    d2 = _exact_sq_dist(features[:, None, :], features[None, :, :])
    np.fill_diagonal(d2, np.inf)
    cols = np.broadcast_to(np.arange(n), (n, n))
    order = np.lexsort((cols, d2), axis=1)
    return order[:, :k]


def _refine_candidates(
    features: np.ndarray, k: int, cand: np.ndarray, boundary: np.ndarray, tol: np.ndarray
) -> np.ndarray:
    """Select the exact k nearest from per-row candidate sets.

    ``boundary`` is a per-row lower bound on the (approximate) distance of any
    excluded point and ``tol`` bounds the approximation error, so a row can
    only be wrong when its k-th exact distance reaches boundary - tol; those
    rows are re-done with a direct scan.
    """
    n = features.shape[0]
    ed2 = _exact_sq_dist(features[:, None, :], features[cand])
    order = np.lexsort((cand, ed2), axis=1)[:, :k]
    nbr = np.take_along_axis(cand, order, axis=1)
    kth = np.take_along_axis(ed2, order[:, -1:], axis=1)[:, 0]

    risky = np.nonzero(kth >= boundary - tol)[0]
    for i in risky:
        d2 = _exact_sq_dist(features[i], features)
        d2[i] = np.inf
        full = np.lexsort((np.arange(n), d2))[:k]
        nbr[i] = full
    return nbr


def _neighbours_kdtree(features: np.ndarray, k: int) -> np.ndarray:
    n = features.shape[0]
    m = min(n - 1, k + _CANDIDATE_SLACK)
    tree = cKDTree(features.astype(np.float64))
    dist, cand = tree.query(features, k=m + 1)
    # Drop the query point itself wherever it appears; keep m candidates.
    keep = cand != np.arange(n)[:, None]
    # Self is always found (distance 0); each row keeps exactly m entries.
    cand = cand[keep].reshape(n, m)
    dist = dist[keep].reshape(n, m)
    boundary = dist[:, -1] ** 2 if m < n - 1 else np.full(n, np.inf)
    tol = 1e-9 * (boundary + 1.0)
    return _refine_candidates(features, k, cand, boundary, tol)


def _neighbours_gram(features: np.ndarray, k: int) -> np.ndarray:
    n = features.shape[0]
    m = min(n - 1, k + _CANDIDATE_SLACK)
    f = features if features.dtype == np.float32 else features.astype(np.float64)
    sq = np.einsum("ij,ij->i", f, f)
    # Per-row ranking only needs |x_j|^2 - 2 <x_i, x_j>; the |x_i|^2 term is
    # constant along a row and is dropped.
    rank = sq[None, :] - 2.0 * (f @ f.T)
    np.fill_diagonal(rank, np.inf)
    cand = np.argpartition(rank, m - 1, axis=1)[:, :m]
    cand_rank = np.take_along_axis(rank, cand, axis=1)
    boundary_rank = cand_rank.max(axis=1)
    # Convert the rank-space boundary back to squared distance and pad by the
    # Gram evaluation error so no true neighbour can hide beyond it.
    boundary = boundary_rank.astype(np.float64) + sq.astype(np.float64)
    eps = 1e-6 if f.dtype == np.float32 else 1e-13
    tol = eps * (np.abs(boundary) + float(np.max(sq)) + 1.0)
    return _refine_candidates(features, k, cand, boundary, tol)


def knn_graph(features: np.ndarray, k: int) -> EdgeList:
    """Exact kNN self-loop graph over row vectors of ``features``."""
    features = _validate(features, k)
    n = features.shape[0]
    if n <= _BRUTE_MAX_N or k + _CANDIDATE_SLACK >= n - 1:
        nbr = _neighbours_direct(features, k)
    elif features.shape[1] <= _KDTREE_MAX_DIM:
        nbr = _neighbours_kdtree(features, k)
    else:
        nbr = _neighbours_gram(features, k)

    all_sources = np.concatenate(
        [np.arange(n, dtype=np.int64)[:, None], nbr.astype(np.int64)], axis=1
    )
    all_sources.sort(axis=1)
    targets = np.repeat(np.arange(n, dtype=np.int64), k + 1)
    return EdgeList(targets=targets, sources=all_sources.ravel(), k=k)
