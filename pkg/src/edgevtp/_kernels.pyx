# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: capped radius-kNN edge search and batched Bezier evaluation.

Semantics match ``edgevtp._pykernels`` exactly; distances are computed as
``sqrt(dx*dx + dy*dy)`` in both so tie-breaking agrees bit for bit.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, floor, isfinite
from libc.stdlib cimport malloc, free, qsort

cnp.import_array()

BRUTE_FORCE_BELOW = 64


cdef struct Cand:
    double d
    Py_ssize_t j


cdef int _cmp_cand(const void* a, const void* b) noexcept nogil:
    cdef Cand* x = <Cand*>a
    cdef Cand* y = <Cand*>b
    if x.d < y.d:
        return -1
    if x.d > y.d:
        return 1
    if x.j < y.j:
        return -1
    if x.j > y.j:
        return 1
    return 0


cdef inline bint _less(Cand* a, Cand* b) noexcept nogil:
    return a.d < b.d or (a.d == b.d and a.j < b.j)


cdef void _sift_down(Cand* heap, Py_ssize_t size, Py_ssize_t root) noexcept nogil:
    # max-heap on (d, j): the worst kept candidate sits at heap[0]
    cdef Py_ssize_t child
    cdef Cand tmp
    while True:
        child = 2 * root + 1
        if child >= size:
            return
        if child + 1 < size and _less(&heap[child], &heap[child + 1]):
            child += 1
        if not _less(&heap[root], &heap[child]):
            return
        tmp = heap[root]
        heap[root] = heap[child]
        heap[child] = tmp
        root = child


cdef Py_ssize_t _emit_sorted(Cand* buf, Py_ssize_t n, Py_ssize_t k,
                             cnp.int64_t* out, double* dout) noexcept nogil:
    """Write the k smallest of buf[:n] by (d, j), in order; O(n log k) selection."""
    cdef Py_ssize_t m, t
    if n > k:
        for t in range(k // 2 - 1, -1, -1):
            _sift_down(buf, k, t)
        for t in range(k, n):
            if _less(&buf[t], &buf[0]):
                buf[0] = buf[t]
                _sift_down(buf, k, 0)
        m = k
    else:
        m = n
    if m > 1:
        qsort(buf, m, sizeof(Cand), _cmp_cand)
    for t in range(m):
        out[t] = buf[t].j
        dout[t] = buf[t].d
    return m


def knn_radius(double[:, ::1] pos, double r, Py_ssize_t k, bint use_grid=True):
    """Return (offsets, neighbors, distances) for the capped radius neighborhood.

    Row ``i`` lists up to ``k`` indices ``j != i`` with distance <= r,
    ordered by (distance, index).
    """
    cdef Py_ssize_t n = pos.shape[0]
    cdef Py_ssize_t cap = k if k < n - 1 else (n - 1 if n > 0 else 0)
    offsets = np.zeros(n + 1, dtype=np.int64)
    neigh = np.empty(n * cap if cap > 0 else 0, dtype=np.int64)
    dists = np.empty(n * cap if cap > 0 else 0, dtype=np.float64)
    if n == 0 or cap == 0:
        return offsets, neigh[:0], dists[:0]
    cdef cnp.int64_t[::1] off = offsets
    cdef cnp.int64_t[::1] nb = neigh
    cdef double[::1] dd = dists
    cdef Cand* buf = <Cand*>malloc(n * sizeof(Cand))
    cdef Py_ssize_t i, j, c, total = 0, m
    cdef double dx, dy, d
    cdef double minx, miny, maxx, maxy, cell
    cdef Py_ssize_t ncx, ncy, cx, cy, gx, gy, cid, s
    cdef cnp.int64_t[::1] cell_of, start, order, fill
    try:
        if not use_grid or n < BRUTE_FORCE_BELOW or not isfinite(r):
            for i in range(n):
                c = 0
                for j in range(n):
                    if j == i:
                        continue
                    dx = pos[j, 0] - pos[i, 0]
                    dy = pos[j, 1] - pos[i, 1]
                    d = sqrt(dx * dx + dy * dy)
                    if d <= r:
                        buf[c].d = d
                        buf[c].j = j
                        c += 1
                m = _emit_sorted(buf, c, cap, &nb[total], &dd[total])
                total += m
                off[i + 1] = total
        else:
            minx = maxx = pos[0, 0]
            miny = maxy = pos[0, 1]
            for i in range(1, n):
                if pos[i, 0] < minx: minx = pos[i, 0]
                if pos[i, 0] > maxx: maxx = pos[i, 0]
                if pos[i, 1] < miny: miny = pos[i, 1]
                if pos[i, 1] > maxy: maxy = pos[i, 1]
            cell = r if r > 0 else 1.0
            # any cell size >= r keeps the 3x3 neighborhood exact; coarsen sparse grids
            while (floor((maxx - minx) / cell) + 1.0) * (floor((maxy - miny) / cell) + 1.0) > 4.0 * n + 16.0:
                cell *= 2.0
            ncx = <Py_ssize_t>floor((maxx - minx) / cell) + 1
            ncy = <Py_ssize_t>floor((maxy - miny) / cell) + 1
            cell_of = np.empty(n, dtype=np.int64)
            start = np.zeros(ncx * ncy + 1, dtype=np.int64)
            fill = np.zeros(ncx * ncy, dtype=np.int64)
            order = np.empty(n, dtype=np.int64)
            for i in range(n):
                cx = <Py_ssize_t>floor((pos[i, 0] - minx) / cell)
                cy = <Py_ssize_t>floor((pos[i, 1] - miny) / cell)
                if cx >= ncx: cx = ncx - 1
                if cy >= ncy: cy = ncy - 1
                cell_of[i] = cy * ncx + cx
                start[cell_of[i] + 1] += 1
            for cid in range(ncx * ncy):
                start[cid + 1] += start[cid]
            for i in range(n):
                cid = cell_of[i]
                order[start[cid] + fill[cid]] = i
                fill[cid] += 1
            for i in range(n):
                c = 0
                cx = cell_of[i] % ncx
                cy = cell_of[i] // ncx
                for gy in range(cy - 1, cy + 2):
                    if gy < 0 or gy >= ncy:
                        continue
                    for gx in range(cx - 1, cx + 2):
                        if gx < 0 or gx >= ncx:
                            continue
                        cid = gy * ncx + gx
                        for s in range(start[cid], start[cid + 1]):
                            j = order[s]
                            if j == i:
                                continue
                            dx = pos[j, 0] - pos[i, 0]
                            dy = pos[j, 1] - pos[i, 1]
                            d = sqrt(dx * dx + dy * dy)
                            if d <= r:
                                buf[c].d = d
                                buf[c].j = j
                                c += 1
                m = _emit_sorted(buf, c, cap, &nb[total], &dd[total])
                total += m
                off[i + 1] = total
    finally:
        free(buf)
    return offsets, neigh[:total], dists[:total]


def bezier_eval(const double[:, ::1] basis, const double[:, :, ::1] ctrl):
    """samples[n, s, :] = sum_k basis[s, k] * ctrl[n, k, :]."""
    cdef Py_ssize_t n = ctrl.shape[0], t = basis.shape[0], nk = basis.shape[1]
    out = np.empty((n, t, 2), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    cdef Py_ssize_t i, s, q
    cdef double ax, ay, w
    for i in range(n):
        for s in range(t):
            ax = 0.0
            ay = 0.0
            for q in range(nk):
                w = basis[s, q]
                ax = ax + w * ctrl[i, q, 0]
                ay = ay + w * ctrl[i, q, 1]
            o[i, s, 0] = ax
            o[i, s, 1] = ay
    return out
