"""Codebook training and short-code encoding.

A product quantizer splits a d-dimensional vector into m consecutive
sub-vectors and quantizes each against its own codebook of 2^b centroids.
The code of a vector is the tuple of m centroid indexes. An optional
orthonormal rotation is applied before splitting (and undone on decode).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import BinaryIO

import numpy as np
from scipy import sparse

from . import _binio
from ._dist import nearest, sqdist_matrix


class TrainError(RuntimeError):
    """Training could not produce a valid quantizer."""


@dataclass
class TrainConfig:
    kmeans_iters: int = 25
    opq_iters: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.kmeans_iters < 1:
            raise ValueError("kmeans_iters must be >= 1")
        if self.opq_iters < 0:
            raise ValueError("opq_iters must be >= 0")


@dataclass
class ProductQuantizer:
    """m codebooks of 2^b centroids over d/m dimensions each.

    codebooks has shape (m, 2^b, d/m), float32. rotation, when present, is a
    d x d orthonormal matrix applied to vectors before sub-space splitting.
    """

    m: int
    b: int
    d: int
    codebooks: np.ndarray
    rotation: np.ndarray | None = None

    def __post_init__(self):
        if self.d % self.m != 0:
            raise ValueError(f"d={self.d} not divisible by m={self.m}")
        if not 1 <= self.b <= 16:
            raise ValueError(f"b={self.b} out of range [1, 16]")
        k, dsub = 1 << self.b, self.d // self.m
        self.codebooks = np.ascontiguousarray(self.codebooks, dtype=np.float32)
        if self.codebooks.shape != (self.m, k, dsub):
            raise ValueError(
                f"codebooks shape {self.codebooks.shape}, expected {(self.m, k, dsub)}"
            )
        if not np.all(np.isfinite(self.codebooks)):
            raise ValueError("codebooks contain non-finite values")
        if self.rotation is not None:
            self.rotation = np.ascontiguousarray(self.rotation, dtype=np.float32)
            if self.rotation.shape != (self.d, self.d):
                raise ValueError("rotation must be d x d")
            gram = self.rotation.T.astype(np.float64) @ self.rotation.astype(np.float64)
            if np.max(np.abs(gram - np.eye(self.d))) > 1e-4:
                raise ValueError("rotation is not orthonormal within 1e-4")

    @property
    def k(self) -> int:
        return 1 << self.b

    @property
    def dsub(self) -> int:
        return self.d // self.m

    @property
    def code_dtype(self) -> np.dtype:
        return np.dtype(np.uint8 if self.b <= 8 else np.uint16)

    def rotate(self, x: np.ndarray) -> np.ndarray:
        """Apply the rotation (identity if absent) to rows of x."""
        if self.rotation is None:
            return np.asarray(x, dtype=np.float64)
        return np.asarray(x, dtype=np.float64) @ self.rotation.T.astype(np.float64)


def _seed_for(seed: int, lane: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=seed, spawn_key=(lane,))


def _kmeanspp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centroids[0] = points[first]
    closest = sqdist_matrix(points, centroids[:1]).ravel()
    for c in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            pick = int(rng.integers(n))
        else:
            pick = int(rng.choice(n, p=closest / total))
        centroids[c] = points[pick]
        closest = np.minimum(closest, sqdist_matrix(points, centroids[c : c + 1]).ravel())
    return centroids


def _repair_empty(
    points: np.ndarray, centroids: np.ndarray, assign: np.ndarray, dist: np.ndarray
) -> bool:
    """Re-seed empty clusters from points farthest from their centroid."""
    counts = np.bincount(assign, minlength=centroids.shape[0])
    empties = np.flatnonzero(counts == 0)
    if empties.size == 0:
        return False
    work = dist.copy()
    for c in empties:
        far = int(np.argmax(work))
        centroids[c] = points[far]
        work[far] = -1.0
    return True


def _mean_update(
    points: np.ndarray, assign: np.ndarray, k: int, fallback: np.ndarray
) -> np.ndarray:
    n = points.shape[0]
    onehot = sparse.csr_matrix(
        (np.ones(n), assign, np.arange(n + 1)), shape=(n, k)
    )
    sums = onehot.T @ points
    counts = np.bincount(assign, minlength=k).astype(np.float64)
    out = fallback.copy()
    nonzero = counts > 0
    out[nonzero] = sums[nonzero] / counts[nonzero, None]
    return out


def kmeans(
    points: np.ndarray, k: int, cfg: TrainConfig | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's k-means with deterministic seeding.

    Returns (centroids (k, d) float32, assignment (n,) int64). The returned
    assignment maps every point to its nearest returned centroid, ties to the
    lowest centroid index. Empty clusters are re-seeded from the point
    farthest from its current centroid.
    """
    cfg = cfg or TrainConfig()
    points = np.asarray(points, dtype=np.float64)
    return _kmeans_seeded(points, k, cfg, np.random.SeedSequence(cfg.seed))


def same_size_kmeans(
    points: np.ndarray, k: int, cfg: TrainConfig | None = None
) -> tuple[np.ndarray, list[np.ndarray]]:
    """k-means constrained to k groups of exactly n/k members.

    Plain k-means first, then greedy rebalancing: each oversized cluster gives
    up the member whose distance delta to its nearest undersized cluster is
    smallest (ties to the lower point index, then the lower target index),
    until all sizes are equal. Group centroids are the means of the final
    members. Returns (centroids (k, d) float32, list of k index arrays).
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if n % k != 0:
        raise ValueError(f"{n} points not divisible into {k} equal groups")
    target = n // k
    seed_centroids, assign = kmeans(points, k, cfg)
    assign = assign.copy()
    D = sqdist_matrix(points, seed_centroids.astype(np.float64))
    sizes = np.bincount(assign, minlength=k)
    while np.any(sizes > target):
        for c in np.flatnonzero(sizes > target):
            if sizes[c] <= target:
                continue
            under = np.flatnonzero(sizes < target)
            members = np.flatnonzero(assign == c)
            sub = D[members][:, under]
            best_pos = np.argmin(sub, axis=1)
            deltas = sub[np.arange(members.size), best_pos] - D[members, c]
            mi = int(np.argmin(deltas))
            p = int(members[mi])
            u = int(under[best_pos[mi]])
            assign[p] = u
            sizes[c] -= 1
            sizes[u] += 1
    partition = [np.flatnonzero(assign == g) for g in range(k)]
    centroids = np.stack([points[g].mean(axis=0) for g in partition])
    return centroids.astype(np.float32), partition


def _check_train_args(training: np.ndarray, m: int, b: int) -> None:
    if not 1 <= b <= 16:
        raise ValueError(f"b must be in [1, 16], got {b}")
    if training.ndim != 2:
        raise ValueError("training set must be 2-D")
    if training.shape[1] % m != 0:
        raise ValueError(f"d={training.shape[1]} not divisible by m={m}")
    if training.shape[0] < (1 << b):
        raise TrainError(
            f"{training.shape[0]} training points for {1 << b} centroids"
        )


def train_pq(
    training: np.ndarray, m: int, b: int, cfg: TrainConfig | None = None
) -> ProductQuantizer:
    """Train one codebook of 2^b centroids per sub-space. No rotation."""
    cfg = cfg or TrainConfig()
    training = np.asarray(training, dtype=np.float64)
    _check_train_args(training, m, b)
    d = training.shape[1]
    dsub = d // m
    k = 1 << b
    books = np.empty((m, k, dsub), dtype=np.float32)
    for j in range(m):
        sub = training[:, j * dsub : (j + 1) * dsub]
        books[j], _ = _kmeans_seeded(sub, k, cfg, _seed_for(cfg.seed, j))
    return ProductQuantizer(m=m, b=b, d=d, codebooks=books)


def _kmeans_seeded(
    points: np.ndarray, k: int, cfg: TrainConfig, seed_seq: np.random.SeedSequence
) -> tuple[np.ndarray, np.ndarray]:
    """kmeans() with an explicit SeedSequence instead of cfg.seed."""
    n = points.shape[0]
    if n < k:
        raise TrainError(f"{n} training points for {k} clusters")
    rng = np.random.default_rng(seed_seq)
    centroids = _kmeanspp_init(points, k, rng)
    prev_assign = None
    for _ in range(cfg.kmeans_iters):
        assign, dist = nearest(points, centroids)
        if _repair_empty(points, centroids, assign, dist):
            assign, dist = nearest(points, centroids)
        if prev_assign is not None and np.array_equal(assign, prev_assign):
            break
        centroids = _mean_update(points, assign, k, centroids)
        prev_assign = assign
    out = centroids.astype(np.float32)
    final_assign, _ = nearest(points, out.astype(np.float64))
    return out, final_assign


def train_opq(
    training: np.ndarray,
    m: int,
    b: int,
    cfg: TrainConfig | None = None,
    error_trace: list[float] | None = None,
) -> ProductQuantizer:
    """Train codebooks jointly with an orthonormal rotation.

    Alternates (A) one k-means step per sub-space under the current rotation
    with (B) the closed-form orthogonal update: the rotation maximizing the
    trace of R (X^T Xhat) is V U^T where U S V^T is the SVD of the
    cross-covariance between data and reconstructions. opq_iters=0 degenerates
    to plain product-quantizer training with an identity rotation.

    If error_trace is given, the mean squared reconstruction error after each
    iteration's step (A) is appended to it.
    """
    cfg = cfg or TrainConfig()
    training = np.asarray(training, dtype=np.float64)
    _check_train_args(training, m, b)
    d = training.shape[1]
    dsub = d // m
    k = 1 << b
    base = train_pq(training, m, b, cfg)
    books = base.codebooks.astype(np.float64)
    rot = np.eye(d, dtype=np.float64)
    n = training.shape[0]
    for _ in range(cfg.opq_iters):
        z = training @ rot.T
        recon = np.empty_like(z)
        total_err = 0.0
        for j in range(m):
            sub = z[:, j * dsub : (j + 1) * dsub]
            assign, dist = nearest(sub, books[j])
            if _repair_empty(sub, books[j], assign, dist):
                assign, dist = nearest(sub, books[j])
            books[j] = _mean_update(sub, assign, k, books[j])
            recon[:, j * dsub : (j + 1) * dsub] = books[j][assign]
            total_err += float(dist.sum())
        if error_trace is not None:
            error_trace.append(total_err / n)
        try:
            u, _, vh = np.linalg.svd(training.T @ recon)
        except np.linalg.LinAlgError as exc:
            raise TrainError(f"rotation update failed: {exc}") from exc
        rot = (u @ vh).T
    return ProductQuantizer(
        m=m,
        b=b,
        d=d,
        codebooks=books.astype(np.float32),
        rotation=rot.astype(np.float32),
    )


def encode(pq: ProductQuantizer, x: np.ndarray) -> np.ndarray:
    """Map vectors to codes: per sub-space index of the nearest centroid.

    Ties resolve to the lowest centroid index. Accepts a single row (d,) or a
    batch (n, d); returns (m,) or (n, m) with dtype uint8 (b <= 8) or uint16.
    """
    x = np.asarray(x)
    single = x.ndim == 1
    rows = x[None, :] if single else x
    if rows.shape[1] != pq.d:
        raise ValueError(f"vector dimensionality {rows.shape[1]}, expected {pq.d}")
    z = pq.rotate(rows)
    dsub = pq.dsub
    out = np.empty((rows.shape[0], pq.m), dtype=pq.code_dtype)
    for j in range(pq.m):
        idx, _ = nearest(z[:, j * dsub : (j + 1) * dsub], pq.codebooks[j].astype(np.float64))
        out[:, j] = idx.astype(pq.code_dtype)
    return out[0] if single else out


def decode(pq: ProductQuantizer, codes: np.ndarray) -> np.ndarray:
    """Reconstruct vectors from codes (concatenated centroids, un-rotated)."""
    codes = np.asarray(codes)
    single = codes.ndim == 1
    rows = codes[None, :] if single else codes
    if rows.shape[1] != pq.m:
        raise ValueError(f"code width {rows.shape[1]}, expected m={pq.m}")
    if np.any(rows >= pq.k):
        raise ValueError(f"sub-index out of range for k={pq.k}")
    parts = [pq.codebooks[j][rows[:, j].astype(np.int64)] for j in range(pq.m)]
    z = np.concatenate(parts, axis=1).astype(np.float64)
    if pq.rotation is not None:
        z = z @ pq.rotation.astype(np.float64)
    out = z.astype(np.float32)
    return out[0] if single else out


MAGIC_QUANTIZER = b"PQZ1"


def write_quantizer_body(f: BinaryIO, pq: ProductQuantizer) -> None:
    _binio.write_magic(f, MAGIC_QUANTIZER)
    _binio.write_i32(f, pq.m)
    _binio.write_i32(f, pq.b)
    _binio.write_i32(f, pq.d)
    _binio.write_i32(f, 1 if pq.rotation is not None else 0)
    if pq.rotation is not None:
        _binio.write_array(f, pq.rotation, "<f4")
    _binio.write_array(f, pq.codebooks, "<f4")


def read_quantizer_body(f: BinaryIO) -> ProductQuantizer:
    _binio.expect_magic(f, MAGIC_QUANTIZER)
    m = _binio.read_i32(f)
    b = _binio.read_i32(f)
    d = _binio.read_i32(f)
    has_rot = _binio.read_i32(f)
    rotation = None
    if has_rot:
        rotation = _binio.read_array(f, "<f4", d * d).reshape(d, d)
    k = 1 << b
    dsub = d // m
    books = _binio.read_array(f, "<f4", m * k * dsub).reshape(m, k, dsub)
    return ProductQuantizer(m=m, b=b, d=d, codebooks=books, rotation=rotation)


def save_quantizer(path, pq: ProductQuantizer) -> None:
    with open(path, "wb") as f:
        write_quantizer_body(f, pq)


def load_quantizer(path) -> ProductQuantizer:
    with open(path, "rb") as f:
        return read_quantizer_body(f)
