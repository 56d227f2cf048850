# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel implementations.

Twin of _kernels_np; squared distances use the same (dx*dx + dy*dy) + dz*dz
evaluation order so results match the numpy backend bit for bit.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()

BACKEND_NAME = "compiled"


def fps(double[:, ::1] coords, Py_ssize_t m, Py_ssize_t seed):
    cdef Py_ssize_t n = coords.shape[0]
    out_arr = np.empty(m, dtype=np.int64)
    dmin_arr = np.empty(n, dtype=np.float64)
    cdef cnp.int64_t[::1] out = out_arr
    cdef double[::1] dmin = dmin_arr
    cdef Py_ssize_t i, j, best
    cdef double cx, cy, cz, dx, dy, dz, d, bestd

    out[0] = seed
    cx = coords[seed, 0]; cy = coords[seed, 1]; cz = coords[seed, 2]
    for j in range(n):
        dx = coords[j, 0] - cx
        dy = coords[j, 1] - cy
        dz = coords[j, 2] - cz
        dmin[j] = (dx * dx + dy * dy) + dz * dz
    for i in range(1, m):
        best = 0
        bestd = dmin[0]
        for j in range(1, n):
            if dmin[j] > bestd:  # strict: ties keep the lowest index
                bestd = dmin[j]
                best = j
        out[i] = best
        cx = coords[best, 0]; cy = coords[best, 1]; cz = coords[best, 2]
        for j in range(n):
            dx = coords[j, 0] - cx
            dy = coords[j, 1] - cy
            dz = coords[j, 2] - cz
            d = (dx * dx + dy * dy) + dz * dz
            if d < dmin[j]:
                dmin[j] = d
    return out_arr


def radius_filter(double[:, ::1] coords, double[::1] query, cnp.int64_t[::1] cand,
                  double radius, Py_ssize_t k_cap):
    cdef Py_ssize_t nc = cand.shape[0]
    out_arr = np.empty(min(nc, k_cap), dtype=np.int64)
    cdef cnp.int64_t[::1] out = out_arr
    cdef double r2 = radius * radius
    cdef double qx = query[0], qy = query[1], qz = query[2]
    cdef Py_ssize_t i, kept = 0
    cdef cnp.int64_t p
    cdef double dx, dy, dz

    for i in range(nc):
        p = cand[i]
        dx = coords[p, 0] - qx
        dy = coords[p, 1] - qy
        dz = coords[p, 2] - qz
        if (dx * dx + dy * dy) + dz * dz <= r2:
            out[kept] = p
            kept += 1
            if kept == k_cap:
                break
    return out_arr[:kept], kept


def knn(double[:, ::1] coords, double[::1] query, Py_ssize_t k):
    cdef Py_ssize_t n = coords.shape[0]
    d2_arr = np.empty(n, dtype=np.float64)
    used_arr = np.zeros(n, dtype=np.uint8)
    idx_arr = np.empty(k, dtype=np.int64)
    dist_arr = np.empty(k, dtype=np.float64)
    cdef double[::1] d2 = d2_arr
    cdef cnp.uint8_t[::1] used = used_arr
    cdef cnp.int64_t[::1] idx = idx_arr
    cdef double[::1] dist = dist_arr
    cdef double qx = query[0], qy = query[1], qz = query[2]
    cdef Py_ssize_t i, j, best
    cdef double dx, dy, dz, bestd

    for j in range(n):
        dx = coords[j, 0] - qx
        dy = coords[j, 1] - qy
        dz = coords[j, 2] - qz
        d2[j] = (dx * dx + dy * dy) + dz * dz
    # repeated strict-min scan == stable sort on (distance, index)
    for i in range(k):
        best = -1
        bestd = 0.0
        for j in range(n):
            if used[j]:
                continue
            if best < 0 or d2[j] < bestd:
                bestd = d2[j]
                best = j
        used[best] = 1
        idx[i] = best
        dist[i] = sqrt(bestd)
    return idx_arr, dist_arr


def nearest_match(double[:, ::1] prev, double[:, ::1] cur):
    cdef Py_ssize_t m = cur.shape[0]
    cdef Py_ssize_t mp = prev.shape[0]
    out_arr = np.empty(m, dtype=np.int64)
    cdef cnp.int64_t[::1] out = out_arr
    cdef Py_ssize_t i, j, best
    cdef double dx, dy, dz, d, bestd

    for i in range(m):
        best = 0
        dx = cur[i, 0] - prev[0, 0]
        dy = cur[i, 1] - prev[0, 1]
        dz = cur[i, 2] - prev[0, 2]
        bestd = (dx * dx + dy * dy) + dz * dz
        for j in range(1, mp):
            dx = cur[i, 0] - prev[j, 0]
            dy = cur[i, 1] - prev[j, 1]
            dz = cur[i, 2] - prev[j, 2]
            d = (dx * dx + dy * dy) + dz * dz
            if d < bestd:  # strict: ties keep the lowest index
                bestd = d
                best = j
        out[i] = best
    return out_arr
