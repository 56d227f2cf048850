"""Deterministic geometric kernels with interchangeable backends.

The hot loops (farthest point sampling, radius filtering, k-NN, nearest
matching) live in a compiled extension when available and in a numpy module
otherwise; both produce bit-identical output. Selection happens at import,
overridable with SEQSEG_BACKEND=compiled|python.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels_np

_requested = os.environ.get("SEQSEG_BACKEND", "auto").strip().lower()
if _requested in ("auto", ""):
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _kernels_np
elif _requested in ("compiled", "cython"):
    from . import _kernels as _impl
elif _requested in ("python", "numpy"):
    _impl = _kernels_np
else:
    raise RuntimeError(f"SEQSEG_BACKEND={_requested!r}: expected compiled|python|auto")

BACKEND = _impl.BACKEND_NAME

_fps_calls = 0


def fps_call_count() -> int:
    return _fps_calls


def reset_fps_counter() -> None:
    global _fps_calls
    _fps_calls = 0


@dataclass
class PointFrame:
    """One time step of a point cloud sequence."""

    coords: np.ndarray                 # N x 3, meters
    features: np.ndarray               # N x C
    labels: Optional[np.ndarray] = None  # N class indices
    frame_index: int = 0

    def __post_init__(self):
        self.coords = np.ascontiguousarray(self.coords, dtype=np.float64)
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        if self.coords.ndim != 2 or self.coords.shape[1] != 3 or self.coords.shape[0] < 1:
            raise ValueError(f"coords must be N x 3 with N >= 1, got {self.coords.shape}")
        if not np.all(np.isfinite(self.coords)):
            raise ValueError("coords must be finite")
        if self.features.ndim != 2 or self.features.shape[0] != self.coords.shape[0]:
            raise ValueError(f"features must be N x C, got {self.features.shape} "
                             f"for N={self.coords.shape[0]}")
        if self.labels is not None:
            self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.coords.shape[0],):
                raise ValueError(f"labels shape {self.labels.shape} != (N,)")
            if self.labels.size and self.labels.min() < 0:
                raise ValueError("labels must be non-negative class indices")
        if self.frame_index < 0:
            raise ValueError("frame_index must be non-negative")

    @property
    def num_points(self) -> int:
        return self.coords.shape[0]


@dataclass
class GridIndex:
    """Uniform hash grid: cell edge == query radius, floor(coord/r) bucketing."""

    cell_size: float
    cells: dict[tuple[int, int, int], np.ndarray] = field(default_factory=dict)


@dataclass
class NeighborList:
    """Radius-query results for a batch of queries.

    ``indices`` holds each query's neighbor point indices (ascending, length
    <= k_cap); ``counts`` the per-query lengths.
    """

    indices: list[np.ndarray]
    counts: np.ndarray

    def flat(self) -> np.ndarray:
        """All indices concatenated in query order (for segment reductions)."""
        if not self.indices:
            return np.empty(0, dtype=np.int64)
        return np.concatenate(self.indices)


def _as_coords(coords) -> np.ndarray:
    arr = np.ascontiguousarray(coords, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"expected N x 3 coords, got {arr.shape}")
    return arr


def farthest_point_sample(coords, m: int, seed_index: int = 0) -> np.ndarray:
    """Greedy farthest point sampling starting at seed_index.

    Each pick maximizes the minimum distance to the already-chosen set; ties
    break toward the lowest point index.
    """
    global _fps_calls
    arr = _as_coords(coords)
    n = arr.shape[0]
    if not 1 <= m <= n:
        raise ValueError(f"need 1 <= m <= N, got m={m}, N={n}")
    if not 0 <= seed_index < n:
        raise ValueError(f"seed_index {seed_index} out of range for N={n}")
    _fps_calls += 1
    return _impl.fps(arr, m, seed_index)


def build_grid_index(coords, radius: float) -> GridIndex:
    """Bucket points into cells of edge ``radius`` (floor rule per axis)."""
    arr = _as_coords(coords)
    if not radius > 0.0:
        raise ValueError(f"radius must be positive, got {radius}")
    cells = np.floor(arr / radius).astype(np.int64)
    n = arr.shape[0]
    order = np.lexsort((np.arange(n), cells[:, 2], cells[:, 1], cells[:, 0]))
    sorted_cells = cells[order]
    index = GridIndex(cell_size=float(radius))
    if n:
        change = np.nonzero(np.any(sorted_cells[1:] != sorted_cells[:-1], axis=1))[0] + 1
        starts = np.concatenate([[0], change, [n]])
        for a, b in zip(starts[:-1], starts[1:]):
            key = tuple(int(v) for v in sorted_cells[a])
            index.cells[key] = np.sort(order[a:b]).astype(np.int64)
    return index


def _candidates(index: GridIndex, query: np.ndarray) -> np.ndarray:
    """Indices from the 27 cells around the query, ascending."""
    base = np.floor(query / index.cell_size).astype(np.int64)
    found = []
    for ox in (-1, 0, 1):
        for oy in (-1, 0, 1):
            for oz in (-1, 0, 1):
                arr = index.cells.get((int(base[0]) + ox, int(base[1]) + oy,
                                       int(base[2]) + oz))
                if arr is not None:
                    found.append(arr)
    if not found:
        return np.empty(0, dtype=np.int64)
    return np.sort(np.concatenate(found))


def radius_neighbors(index: GridIndex, coords, query, radius: float,
                     k_cap: int) -> tuple[np.ndarray, int]:
    """Up to k_cap in-radius point indices (ascending) plus the capped count."""
    arr = _as_coords(coords)
    q = np.ascontiguousarray(query, dtype=np.float64).reshape(3)
    if radius != index.cell_size:
        raise ValueError(f"query radius {radius} != index cell size {index.cell_size}")
    if k_cap < 1:
        raise ValueError(f"k_cap must be >= 1, got {k_cap}")
    cand = _candidates(index, q)
    idx, count = _impl.radius_filter(arr, q, cand, float(radius), k_cap)
    return np.asarray(idx, dtype=np.int64), count


def radius_neighbors_batch(coords, queries, radius: float, k_cap: int,
                           index: Optional[GridIndex] = None) -> NeighborList:
    """Radius query for every row of ``queries`` against one shared grid."""
    arr = _as_coords(coords)
    qs = _as_coords(queries)
    if index is None:
        index = build_grid_index(arr, radius)
    out_idx: list[np.ndarray] = []
    counts = np.empty(qs.shape[0], dtype=np.int64)
    for i in range(qs.shape[0]):
        idx, cnt = radius_neighbors(index, arr, qs[i], radius, k_cap)
        out_idx.append(idx)
        counts[i] = cnt
    return NeighborList(indices=out_idx, counts=counts)


def knn(coords, query, k: int) -> tuple[np.ndarray, np.ndarray]:
    """k nearest points: (indices, Euclidean distances), ascending distance."""
    arr = _as_coords(coords)
    q = np.ascontiguousarray(query, dtype=np.float64).reshape(3)
    if not 1 <= k <= arr.shape[0]:
        raise ValueError(f"need 1 <= k <= N, got k={k}, N={arr.shape[0]}")
    idx, dist = _impl.knn(arr, q, k)
    return np.asarray(idx, dtype=np.int64), np.asarray(dist, dtype=np.float64)


def knn_batch(coords, queries, k: int) -> tuple[np.ndarray, np.ndarray]:
    """knn per query row; returns (Q x k indices, Q x k distances)."""
    qs = _as_coords(queries)
    nq = qs.shape[0]
    idx = np.empty((nq, k), dtype=np.int64)
    dist = np.empty((nq, k), dtype=np.float64)
    for i in range(nq):
        idx[i], dist[i] = knn(coords, qs[i], k)
    return idx, dist


def nearest_center_match(prev_centers, cur_centers) -> np.ndarray:
    """For each current center, the index of the nearest previous center."""
    prev = _as_coords(prev_centers)
    cur = _as_coords(cur_centers)
    if prev.shape[0] == 0 or cur.shape[0] == 0:
        raise ValueError("center sets must be non-empty")
    if prev.shape[0] != cur.shape[0]:
        raise ValueError(f"center sets differ in size: {prev.shape[0]} vs {cur.shape[0]}")
    return _impl.nearest_match(prev, cur)
