"""Pure-numpy kernel implementations.

These are the fallback twins of the compiled kernels. Arithmetic order is
kept identical to the C loops -- squared distance is always
(dx*dx + dy*dy) + dz*dz -- so both backends produce bit-identical results.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "python"


def _sqdist_to(coords: np.ndarray, point: np.ndarray) -> np.ndarray:
    dx = coords[:, 0] - point[0]
    dy = coords[:, 1] - point[1]
    dz = coords[:, 2] - point[2]
    return (dx * dx + dy * dy) + dz * dz


def fps(coords: np.ndarray, m: int, seed: int) -> np.ndarray:
    """Greedy farthest point sampling; ties go to the lowest index."""
    out = np.empty(m, dtype=np.int64)
    out[0] = seed
    dmin = _sqdist_to(coords, coords[seed])
    for i in range(1, m):
        best = int(np.argmax(dmin))  # first occurrence == lowest index
        out[i] = best
        np.minimum(dmin, _sqdist_to(coords, coords[best]), out=dmin)
    return out


def radius_filter(coords: np.ndarray, query: np.ndarray, cand: np.ndarray,
                  radius: float, k_cap: int) -> tuple[np.ndarray, int]:
    """Keep candidates within radius, ascending index, truncated at k_cap."""
    if cand.size == 0:
        return cand, 0
    d2 = _sqdist_to(coords[cand], query)
    hits = cand[d2 <= radius * radius][:k_cap]
    return hits, int(hits.size)


def knn(coords: np.ndarray, query: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """k nearest by Euclidean distance, ascending; ties to the lowest index."""
    d2 = _sqdist_to(coords, query)
    order = np.argsort(d2, kind="stable")[:k].astype(np.int64)
    return order, np.sqrt(d2[order])


def nearest_match(prev: np.ndarray, cur: np.ndarray) -> np.ndarray:
    """Index of the nearest prev row per cur row; ties to the lowest index."""
    dx = cur[:, 0][:, None] - prev[:, 0][None, :]
    dy = cur[:, 1][:, None] - prev[:, 1][None, :]
    dz = cur[:, 2][:, None] - prev[:, 2][None, :]
    d2 = (dx * dx + dy * dy) + dz * dz
    return np.argmin(d2, axis=1).astype(np.int64)
