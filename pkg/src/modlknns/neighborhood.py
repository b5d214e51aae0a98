"""Fixed K-nearest-neighbor pool in soft-label space."""
from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .diffcore import ChecksumError, ContractError, atomic_write
from .labelkit import SoftLabelDistribution, frame, unframe

log = logging.getLogger(__name__)

_POOL_MAGIC = b"MKPOOL01"


def local_similarity(l_i, l_k, sigma: float = 1.0) -> float:
    """Gaussian kernel ``exp(-||l_i - l_k||^2 / (2 sigma^2))``."""
    l_i = np.asarray(l_i, dtype=np.float64)
    l_k = np.asarray(l_k, dtype=np.float64)
    if l_i.shape != l_k.shape:
        raise ContractError(f"length mismatch: {l_i.shape} vs {l_k.shape}")
    if not sigma > 0:
        raise ContractError("sigma must be positive")
    d = float(np.sum((l_i - l_k) ** 2))
    return math.exp(-d / (2.0 * sigma * sigma))


@dataclass(frozen=True)
class NeighborPool:
    """Neighbors of every anchor, by row position in the training split.

    ``neighbors[i]`` are row positions (not sample ids) of the ``K`` nearest
    rows to row ``i``; ``ids`` maps positions back to sample ids.
    """

    ids: np.ndarray  # (n,)
    neighbors: np.ndarray  # (n, K) int64 positions
    sq_dists: np.ndarray  # (n, K)
    sims: np.ndarray  # (n, K)
    sigma: float

    @property
    def K(self) -> int:
        return self.neighbors.shape[1]

    def neighbor_ids(self, row: int) -> np.ndarray:
        return self.ids[self.neighbors[row]]

    def rescaled(self, sigma: float) -> "NeighborPool":
        """Same neighbors, similarities recomputed for another width."""
        return NeighborPool(self.ids, self.neighbors, self.sq_dists,
                            _similarities(self.sq_dists, sigma), sigma)


def _similarities(sq_dists: np.ndarray, sigma: float) -> np.ndarray:
    denom = 2.0 * sigma * sigma
    # scalar libm exp, so values agree bit-for-bit with local_similarity
    flat = [math.exp(-d / denom) for d in sq_dists.ravel().tolist()]
    return np.asarray(flat, dtype=np.float64).reshape(sq_dists.shape)


def pairwise_sq_dists(rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, accumulated class by class in order."""
    out = np.zeros((rows.shape[0], cols.shape[0]))
    for c in range(rows.shape[1]):
        diff = rows[:, c, None] - cols[None, :, c]
        out += diff * diff
    return out


def build_neighbor_pool(dist: SoftLabelDistribution | np.ndarray, K: int = 9,
                        sigma: float = 1.0, ids: Optional[np.ndarray] = None,
                        include_self: bool = False, chunk: int = 512) -> NeighborPool:
    """Exact brute-force K-nearest neighbors.

    Ordering is ascending squared distance, ties by ascending sample id.
    ``K`` larger than the number of candidates is clamped with a warning.
    """
    L = np.asarray(getattr(dist, "values", dist), dtype=np.float64)
    n = L.shape[0]
    if K < 1:
        raise ContractError("K must be at least 1")
    if not sigma > 0:
        raise ContractError("sigma must be positive")
    if n < 2:
        raise ContractError(f"need at least 2 samples to build a pool, got {n}")
    ids = np.arange(n, dtype=np.int64) if ids is None else np.asarray(ids, dtype=np.int64)
    limit = n if include_self else n - 1
    if K > limit:
        log.warning("K=%d exceeds available neighbors; clamped to %d", K, limit)
        K = limit
    neighbors = np.empty((n, K), dtype=np.int64)
    sq = np.empty((n, K))
    id_row = np.broadcast_to(ids, (min(chunk, n), n))
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        d = pairwise_sq_dists(L[start:stop], L)
        if not include_self:
            d[np.arange(stop - start), np.arange(start, stop)] = np.inf
        order = np.lexsort((id_row[: stop - start], d), axis=-1)[:, :K]
        neighbors[start:stop] = order
        sq[start:stop] = np.take_along_axis(d, order, axis=1)
    return NeighborPool(ids, neighbors, sq, _similarities(sq, sigma), float(sigma))


def write_pool(pool: NeighborPool, path) -> None:
    n, K = pool.neighbors.shape
    header = struct.pack("<QQd", n, K, pool.sigma)
    payload = b"".join(np.ascontiguousarray(a, dtype=dt).tobytes() for a, dt in (
        (pool.ids, "<i8"), (pool.neighbors, "<i8"), (pool.sq_dists, "<f8"), (pool.sims, "<f8")))
    atomic_write(path, frame(_POOL_MAGIC, header, payload))


def read_pool(path) -> NeighborPool:
    header, payload = unframe(Path(path).read_bytes(), _POOL_MAGIC, path)
    n, K, sigma = struct.unpack("<QQd", header)
    if len(payload) != 8 * (n + 3 * n * K):
        raise ChecksumError(f"{path}: payload size does not match header")
    pos = 0

    def grab(count, dtype, shape):
        nonlocal pos
        arr = np.frombuffer(payload, dtype=dtype, count=count, offset=pos).reshape(shape)
        pos += 8 * count
        return arr.copy()

    ids = grab(n, "<i8", (n,)).astype(np.int64)
    nb = grab(n * K, "<i8", (n, K)).astype(np.int64)
    sq = grab(n * K, "<f8", (n, K)).astype(np.float64)
    sims = grab(n * K, "<f8", (n, K)).astype(np.float64)
    return NeighborPool(ids, nb, sq, sims, sigma)
