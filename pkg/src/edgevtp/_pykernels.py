"""Pure-Python (numpy) versions of the compiled kernels in ``_kernels.pyx``."""
import math

import numpy as np

BRUTE_FORCE_BELOW = 64


def _select(i, cand, pos, r, k):
    # same expression as the compiled kernel: sqrt(dx*dx + dy*dy)
    dx = pos[cand, 0] - pos[i, 0]
    dy = pos[cand, 1] - pos[i, 1]
    d = np.sqrt(dx * dx + dy * dy)
    keep = (d <= r) & (cand != i)
    cand, d = cand[keep], d[keep]
    if len(d) > k:
        # keep every candidate tied with the k-th distance so index order decides
        kth = np.partition(d, k - 1)[k - 1]
        near = d <= kth
        cand, d = cand[near], d[near]
    order = np.lexsort((cand, d))[:k]
    return cand[order], d[order]


def knn_radius(pos, r, k, use_grid=True):
    pos = np.ascontiguousarray(pos, dtype=np.float64)
    n = pos.shape[0]
    cap = min(k, n - 1) if n > 0 else 0
    offsets = np.zeros(n + 1, dtype=np.int64)
    if n == 0 or cap <= 0:
        return offsets, np.empty(0, np.int64), np.empty(0, np.float64)
    rows, drows = [], []
    everyone = np.arange(n, dtype=np.int64)
    if not use_grid or n < BRUTE_FORCE_BELOW or not math.isfinite(r):
        for i in range(n):
            nb, d = _select(i, everyone, pos, r, cap)
            rows.append(nb)
            drows.append(d)
    else:
        lo = pos.min(axis=0)
        span = pos.max(axis=0) - lo
        cell = r if r > 0 else 1.0
        while (math.floor(span[0] / cell) + 1.0) * (math.floor(span[1] / cell) + 1.0) > 4.0 * n + 16.0:
            cell *= 2.0
        ncx = int(math.floor(span[0] / cell)) + 1
        ncy = int(math.floor(span[1] / cell)) + 1
        cxy = np.floor((pos - lo) / cell).astype(np.int64)
        cxy[:, 0] = np.minimum(cxy[:, 0], ncx - 1)
        cxy[:, 1] = np.minimum(cxy[:, 1], ncy - 1)
        buckets: dict[tuple, list] = {}
        for i, (cx, cy) in enumerate(cxy.tolist()):
            buckets.setdefault((cx, cy), []).append(i)
        for i, (cx, cy) in enumerate(cxy.tolist()):
            cand = [j for gy in (cy - 1, cy, cy + 1) for gx in (cx - 1, cx, cx + 1)
                    for j in buckets.get((gx, gy), ())]
            nb, d = _select(i, np.asarray(cand, dtype=np.int64), pos, r, cap)
            rows.append(nb)
            drows.append(d)
    offsets[1:] = np.cumsum([len(x) for x in rows])
    return offsets, np.concatenate(rows).astype(np.int64), np.concatenate(drows)


def bezier_eval(basis, ctrl):
    return np.einsum("sk,nkc->nsc", basis, ctrl)
