"""Batched squared-Euclidean distance helpers."""

from __future__ import annotations

import numpy as np
from scipy.spatial.distance import cdist

# Rows per chunk, sized so a chunk of distances to ~64K centroids stays well
# under a GiB of float64.
_CHUNK = 2048


def sqdist_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """All-pairs squared Euclidean distances, float64, shape (len(a), len(b)).

    Uses the naive sum((u - v)^2) form so that exactly symmetric inputs give
    exactly equal distances; argmin tie-breaking stays meaningful.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return cdist(a, b, "sqeuclidean")


def nearest(points: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per point: (index of nearest centroid, squared distance to it).

    Ties resolve to the lowest centroid index. Chunked over points.
    """
    points = np.asarray(points)
    n = points.shape[0]
    idx = np.empty(n, dtype=np.int64)
    dist = np.empty(n, dtype=np.float64)
    for lo in range(0, n, _CHUNK):
        hi = min(lo + _CHUNK, n)
        dm = sqdist_matrix(points[lo:hi], centroids)
        part = np.argmin(dm, axis=1)
        idx[lo:hi] = part
        dist[lo:hi] = dm[np.arange(hi - lo), part]
    return idx, dist


def nearest_k(points: np.ndarray, centroids: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Per point: indexes and distances of the k nearest centroids.

    Sorted ascending by (distance, index); ties resolve to the lower index.
    """
    points = np.asarray(points)
    n = points.shape[0]
    idx = np.empty((n, k), dtype=np.int64)
    dist = np.empty((n, k), dtype=np.float64)
    ncent = centroids.shape[0]
    cent_ids = np.arange(ncent)
    for lo in range(0, n, _CHUNK):
        hi = min(lo + _CHUNK, n)
        dm = sqdist_matrix(points[lo:hi], centroids)
        for row in range(hi - lo):
            d = dm[row]
            if k < ncent:
                kth = np.partition(d, k - 1)[k - 1]
                cand = np.flatnonzero(d <= kth)
            else:
                cand = cent_ids
            order = np.lexsort((cand, d[cand]))[:k]
            sel = cand[order]
            idx[lo + row] = sel
            dist[lo + row] = d[sel]
    return idx, dist
