"""Bounded directed interaction graph from last observed positions.

Radius gating (inclusive, distance <= r) followed by a hard per-vehicle cap
of K neighbors. Deterministic mode keeps the K nearest by (distance,
index); sampled mode draws K uniformly without replacement from the
radius-filtered set (training-time regularization).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from . import kernels

DETERMINISTIC = "deterministic"
SAMPLED = "sampled"


@dataclass(frozen=True)
class EdgeSet:
    """CSR-style neighbor lists: ``neighbors[offsets[i]:offsets[i+1]]`` is E_i."""

    offsets: np.ndarray
    neighbors: np.ndarray
    r: float
    k: float
    mode: str = DETERMINISTIC
    seed: int | None = None

    @property
    def n(self) -> int:
        return len(self.offsets) - 1

    def neighbor_lists(self) -> list[list[int]]:
        return [self.neighbors[a:b].tolist() for a, b in zip(self.offsets[:-1], self.offsets[1:])]

    def pairs(self) -> np.ndarray:
        """Directed edges (i, j) for every j in E_i, shape (E, 2)."""
        receivers = np.repeat(np.arange(self.n, dtype=np.int64), np.diff(self.offsets))
        return np.stack([receivers, self.neighbors], axis=1)

    def adjacency(self, dtype=np.float64) -> sparse.csr_matrix:
        """Sparse A with A[i, j] = 1 iff j is in E_i (j sends a message to i)."""
        data = np.ones(len(self.neighbors), dtype=dtype)
        return sparse.csr_matrix((data, self.neighbors, self.offsets), shape=(self.n, self.n))


def build_edges(last_positions, r: float, k: float, mode: str = DETERMINISTIC,
                rng: np.random.Generator | int | None = None, use_grid: bool = True) -> EdgeSet:
    """Build E_i for every vehicle; ``k`` may be ``math.inf`` for no cap."""
    pos = np.asarray(last_positions, dtype=np.float64).reshape(-1, 2)
    if not r > 0:
        raise ValueError(f"radius must be positive, got {r}")
    if not k >= 1:
        raise ValueError(f"neighbor cap must be >= 1, got {k}")
    if mode == DETERMINISTIC:
        offsets, neigh, _ = kernels.knn_radius(pos, r, k, use_grid)
        return EdgeSet(offsets, neigh, float(r), k, DETERMINISTIC)
    if mode != SAMPLED:
        raise ValueError(f"unknown edge mode {mode!r}")
    seed = rng if isinstance(rng, (int, np.integer)) else None
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    offsets, cand, _ = kernels.knn_radius(pos, r, math.inf, use_grid)
    rows = []
    for a, b in zip(offsets[:-1], offsets[1:]):
        row = cand[a:b]
        if len(row) > k:
            # keep the (distance, index) order among the sampled subset
            row = row[np.sort(gen.choice(len(row), size=int(k), replace=False))]
        rows.append(row)
    new_offsets = np.zeros_like(offsets)
    new_offsets[1:] = np.cumsum([len(x) for x in rows])
    neigh = np.concatenate(rows).astype(np.int64) if rows else np.empty(0, np.int64)
    return EdgeSet(new_offsets, neigh, float(r), k, SAMPLED, seed)


def edge_count_stats(edges: EdgeSet) -> dict:
    sizes = np.diff(edges.offsets)
    return {
        "total_edges": int(sizes.sum()),
        "max_list_size": int(sizes.max()) if len(sizes) else 0,
        "mean_list_size": float(sizes.mean()) if len(sizes) and sizes.sum() else 0.0,
    }
