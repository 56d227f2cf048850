"""Brute-force reference twins of the geometry kernels.

Straight-line O(N*m) / O(N) implementations used to cross-check the fast
paths. Deliberately written without shared helpers so a bug in a kernel
cannot hide in its oracle.
"""

from __future__ import annotations

import math

import numpy as np


def fps_reference(coords: np.ndarray, m: int, seed: int) -> list[int]:
    n = len(coords)
    chosen = [seed]
    while len(chosen) < m:
        best_i, best_d = -1, -1.0
        for i in range(n):
            dmin = math.inf
            for c in chosen:
                dx = coords[i][0] - coords[c][0]
                dy = coords[i][1] - coords[c][1]
                dz = coords[i][2] - coords[c][2]
                d = dx * dx + dy * dy + dz * dz
                if d < dmin:
                    dmin = d
            if dmin > best_d:  # strict: first (lowest) index wins ties
                best_d, best_i = dmin, i
        chosen.append(best_i)
    return chosen


def radius_reference(coords: np.ndarray, query, radius: float, k_cap: int) -> list[int]:
    hits = []
    for i in range(len(coords)):
        dx = coords[i][0] - query[0]
        dy = coords[i][1] - query[1]
        dz = coords[i][2] - query[2]
        if dx * dx + dy * dy + dz * dz <= radius * radius:
            hits.append(i)
            if len(hits) == k_cap:
                break
    return hits


def knn_reference(coords: np.ndarray, query, k: int) -> list[tuple[int, float]]:
    scored = []
    for i in range(len(coords)):
        dx = coords[i][0] - query[0]
        dy = coords[i][1] - query[1]
        dz = coords[i][2] - query[2]
        scored.append((dx * dx + dy * dy + dz * dz, i))
    scored.sort()  # (distance, index) lexicographic == lowest-index ties
    return [(i, math.sqrt(d)) for d, i in scored[:k]]


def match_reference(prev: np.ndarray, cur: np.ndarray) -> list[int]:
    out = []
    for i in range(len(cur)):
        scored = []
        for j in range(len(prev)):
            dx = cur[i][0] - prev[j][0]
            dy = cur[i][1] - prev[j][1]
            dz = cur[i][2] - prev[j][2]
            scored.append((dx * dx + dy * dy + dz * dz, j))
        out.append(min(scored)[1])
    return out
