"""Distance tables and the baseline table-lookup scan.

Given a query, one lookup table per sub-space holds the squared distance
from the query sub-vector to every centroid. The asymmetric distance of a
code is the sum of m table entries; a scan keeps the r best codes.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import BinaryIO

import numpy as np

from . import _binio
from ._dist import sqdist_matrix
from .quantizer import ProductQuantizer


@dataclass
class LookupTables:
    """Per-sub-space squared distances, shape (m, 2^b) float32."""

    tables: np.ndarray

    def __post_init__(self):
        self.tables = np.ascontiguousarray(self.tables, dtype=np.float32)
        if self.tables.ndim != 2:
            raise ValueError("tables must be 2-D (m, 2^b)")

    @property
    def m(self) -> int:
        return self.tables.shape[0]

    @property
    def k(self) -> int:
        return self.tables.shape[1]

    @property
    def nbytes(self) -> int:
        return self.tables.nbytes


def compute_tables(pq: ProductQuantizer, query: np.ndarray) -> LookupTables:
    """Squared distances from each query sub-vector to every centroid."""
    query = np.asarray(query)
    if query.ndim != 1 or query.shape[0] != pq.d:
        raise ValueError(f"query must have shape ({pq.d},)")
    z = pq.rotate(query[None, :])[0]
    dsub = pq.dsub
    out = np.empty((pq.m, pq.k), dtype=np.float32)
    for j in range(pq.m):
        sub = z[j * dsub : (j + 1) * dsub]
        out[j] = sqdist_matrix(sub[None, :], pq.codebooks[j].astype(np.float64))[0]
    return LookupTables(out)


def adc_distance(tables: LookupTables, code: np.ndarray) -> float:
    """Sum of m table entries, accumulated in float64, sub-space order."""
    t = tables.tables
    acc = 0.0
    for j in range(tables.m):
        acc += float(t[j, int(code[j])])
    return acc


def scan_distances(tables: LookupTables, codes: np.ndarray) -> np.ndarray:
    """adc_distance for every row of codes, bit-identical to the scalar form.

    Accumulates in float64 with a fixed left-to-right sub-space order so that
    the vectorized result matches per-element scalar summation exactly.
    """
    codes = np.asarray(codes)
    if codes.ndim != 2 or codes.shape[1] != tables.m:
        raise ValueError(f"codes must have shape (n, {tables.m})")
    t64 = tables.tables.astype(np.float64)
    acc = np.zeros(codes.shape[0], dtype=np.float64)
    for j in range(tables.m):
        acc += t64[j][codes[:, j].astype(np.int64)]
    return acc


class NeighborSet:
    """The r smallest (distance, id) pairs seen so far.

    Bounded max-heap; ties on distance resolve to the lower id. The final
    contents do not depend on push order.
    """

    __slots__ = ("r", "_heap")

    def __init__(self, r: int):
        if r < 1:
            raise ValueError("r must be >= 1")
        self.r = r
        self._heap: list[tuple[float, int]] = []

    def __len__(self) -> int:
        return len(self._heap)

    @property
    def worst(self) -> float:
        """Current r-th best distance; inf while fewer than r held."""
        if len(self._heap) < self.r:
            return float("inf")
        return -self._heap[0][0]

    def push(self, distance: float, ident: int) -> bool:
        """Offer a candidate; returns True if it was retained."""
        entry = (-float(distance), -int(ident))
        if len(self._heap) < self.r:
            heapq.heappush(self._heap, entry)
            return True
        if entry > self._heap[0]:
            heapq.heappushpop(self._heap, entry)
            return True
        return False

    def items(self) -> list[tuple[float, int]]:
        """Retained (distance, id) pairs, ascending."""
        return sorted((-d, -i) for d, i in self._heap)

    def to_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(distances float64, ids int64), ascending by (distance, id)."""
        pairs = self.items()
        dists = np.array([p[0] for p in pairs], dtype=np.float64)
        ids = np.array([p[1] for p in pairs], dtype=np.int64)
        return dists, ids

    @classmethod
    def from_pairs(cls, r: int, dists: np.ndarray, ids: np.ndarray) -> "NeighborSet":
        """Bulk-load at most r pairs (assumed already the r best)."""
        out = cls(r)
        out._heap = [
            (-float(d), -int(i)) for d, i in zip(dists[:r], ids[:r])
        ]
        heapq.heapify(out._heap)
        return out


def _select_best(
    dists: np.ndarray, ids: np.ndarray, r: int
) -> tuple[np.ndarray, np.ndarray]:
    """The r smallest (distance, id) pairs, ascending, as parallel arrays."""
    n = dists.shape[0]
    r_eff = min(r, n)
    if r_eff == 0:
        return np.empty(0, np.float64), np.empty(0, np.int64)
    kth = np.partition(dists, r_eff - 1)[r_eff - 1]
    cand = np.flatnonzero(dists <= kth)
    order = np.lexsort((ids[cand], dists[cand]))[:r_eff]
    pick = cand[order]
    return dists[pick], ids[pick]


@dataclass
class CodeList:
    """Encoded database: codes (n, m) with parallel int64 ids."""

    codes: np.ndarray
    ids: np.ndarray | None = None

    def __post_init__(self):
        self.codes = np.ascontiguousarray(self.codes)
        if self.codes.ndim != 2:
            raise ValueError("codes must be 2-D (n, m)")
        if self.codes.dtype not in (np.dtype(np.uint8), np.dtype(np.uint16)):
            raise ValueError("codes must be uint8 or uint16")
        if self.ids is None:
            self.ids = np.arange(self.codes.shape[0], dtype=np.int64)
        else:
            self.ids = np.ascontiguousarray(self.ids, dtype=np.int64)
        if self.ids.shape != (self.codes.shape[0],):
            raise ValueError("ids length must match codes")

    @property
    def n(self) -> int:
        return self.codes.shape[0]

    @property
    def m(self) -> int:
        return self.codes.shape[1]

    @classmethod
    def from_vectors(
        cls,
        pq: ProductQuantizer,
        vectors: np.ndarray,
        ids: np.ndarray | None = None,
    ) -> "CodeList":
        from .quantizer import encode

        return cls(encode(pq, np.atleast_2d(vectors)), ids)


def scan(codelist: CodeList, tables: LookupTables, r: int) -> NeighborSet:
    """Exhaustive table-lookup scan: the r best codes by (distance, id)."""
    if r < 1:
        raise ValueError("r must be >= 1")
    dists = scan_distances(tables, codelist.codes)
    best_d, best_i = _select_best(dists, codelist.ids, r)
    return NeighborSet.from_pairs(r, best_d, best_i)


BLOCK = 16


@dataclass
class TransposedCodeList:
    """Codes regrouped into blocks of 16 for in-register lookups.

    b=4: each block has m/2 rows of 16 bytes; byte i of row j packs code i's
    component 2j in the low nibble and 2j+1 in the high nibble. b=8: m rows,
    byte i of row j is code i's component j. The tail block is zero-padded;
    n is the validity count.
    """

    blocks: np.ndarray
    n: int
    m: int
    b: int
    ids: np.ndarray

    def __post_init__(self):
        self.blocks = np.ascontiguousarray(self.blocks, dtype=np.uint8)
        self.ids = np.ascontiguousarray(self.ids, dtype=np.int64)
        rows = self.m // 2 if self.b == 4 else self.m
        nblocks = (self.n + BLOCK - 1) // BLOCK
        if self.blocks.shape != (nblocks, rows, BLOCK):
            raise ValueError(
                f"blocks shape {self.blocks.shape}, expected {(nblocks, rows, BLOCK)}"
            )
        if self.ids.shape != (self.n,):
            raise ValueError("ids length must match n")

    @property
    def n_blocks(self) -> int:
        return self.blocks.shape[0]

    def block_validity(self, block_index: int) -> int:
        """Number of real (non-padding) codes in one block."""
        if block_index < self.n_blocks - 1:
            return BLOCK
        return self.n - block_index * BLOCK


def transpose_blocks(codelist: CodeList, b: int) -> TransposedCodeList:
    """Reorder a code list into component-major blocks of 16 codes."""
    codes = codelist.codes
    n, m = codes.shape
    if b == 4:
        if m % 2 != 0:
            raise ValueError("b=4 transposition needs even m")
        if np.any(codes >= 16):
            raise ValueError("component out of range for b=4")
        rows = m // 2
    elif b == 8:
        if np.any(codes.astype(np.int64) >= 256):
            raise ValueError("component out of range for b=8")
        rows = m
    else:
        raise ValueError(f"block transposition supports b in (4, 8), got b={b}")
    nblocks = (n + BLOCK - 1) // BLOCK
    padded = np.zeros((nblocks * BLOCK, m), dtype=np.uint8)
    padded[:n] = codes.astype(np.uint8)
    per_block = padded.reshape(nblocks, BLOCK, m)
    if b == 4:
        low = per_block[:, :, 0::2]
        high = per_block[:, :, 1::2]
        blocks = np.ascontiguousarray((low | (high << 4)).transpose(0, 2, 1))
    else:
        blocks = np.ascontiguousarray(per_block.transpose(0, 2, 1))
    return TransposedCodeList(blocks=blocks, n=n, m=m, b=b, ids=codelist.ids)


def detranspose_blocks(tlist: TransposedCodeList) -> CodeList:
    """Inverse of transpose_blocks; reproduces the original list exactly."""
    n, m, b = tlist.n, tlist.m, tlist.b
    if b == 4:
        flat = tlist.blocks.transpose(0, 2, 1).reshape(-1, m // 2)
        codes = np.empty((tlist.n_blocks * BLOCK, m), dtype=np.uint8)
        codes[:, 0::2] = flat & 0x0F
        codes[:, 1::2] = flat >> 4
    else:
        codes = tlist.blocks.transpose(0, 2, 1).reshape(-1, m)
    return CodeList(np.ascontiguousarray(codes[:n]), tlist.ids)


MAGIC_CODES = b"PQL1"


def _pack_codes(codes: np.ndarray, b: int) -> np.ndarray:
    n, m = codes.shape
    if b <= 4:
        half = (m + 1) // 2
        out = np.zeros((n, half), dtype=np.uint8)
        out |= codes[:, 0::2].astype(np.uint8)
        odd = codes[:, 1::2].astype(np.uint8)
        out[:, : odd.shape[1]] |= odd << 4
        return out
    if b <= 8:
        return codes.astype(np.uint8)
    return codes.astype(np.uint16)


def _unpack_codes(raw: np.ndarray, n: int, m: int, b: int) -> np.ndarray:
    if b <= 4:
        packed = raw.reshape(n, (m + 1) // 2)
        codes = np.empty((n, m), dtype=np.uint8)
        codes[:, 0::2] = packed[:, : (m + 1) // 2] & 0x0F
        codes[:, 1::2] = (packed >> 4)[:, : m // 2]
        return codes
    if b <= 8:
        return raw.reshape(n, m).astype(np.uint8)
    return raw.reshape(n, m).astype(np.uint16)


def write_codes_body(f: BinaryIO, codelist: CodeList, b: int) -> None:
    n, m = codelist.n, codelist.m
    if np.any(codelist.codes.astype(np.int64) >= (1 << b)):
        raise ValueError(f"codes exceed b={b}")
    _binio.write_magic(f, MAGIC_CODES)
    _binio.write_i32(f, n)
    _binio.write_i32(f, m)
    _binio.write_i32(f, b)
    _binio.write_i32(f, 1)
    packed = _pack_codes(codelist.codes, b)
    _binio.write_array(f, packed, "<u2" if b > 8 else "u1")
    _binio.write_array(f, codelist.ids, "<i8")


def read_codes_body(f: BinaryIO) -> tuple[CodeList, int]:
    """Reads one code list; returns (codelist, b)."""
    _binio.expect_magic(f, MAGIC_CODES)
    n = _binio.read_i32(f)
    m = _binio.read_i32(f)
    b = _binio.read_i32(f)
    has_ids = _binio.read_i32(f)
    if b <= 4:
        count, dtype = n * ((m + 1) // 2), "u1"
    elif b <= 8:
        count, dtype = n * m, "u1"
    else:
        count, dtype = n * m, "<u2"
    raw = _binio.read_array(f, dtype, count)
    codes = _unpack_codes(raw, n, m, b)
    ids = _binio.read_array(f, "<i8", n) if has_ids else None
    return CodeList(codes, ids), b


def save_codes(path, codelist: CodeList, b: int) -> None:
    with open(path, "wb") as f:
        write_codes_body(f, codelist, b)


def load_codes(path) -> tuple[CodeList, int]:
    with open(path, "rb") as f:
        return read_codes_body(f)
