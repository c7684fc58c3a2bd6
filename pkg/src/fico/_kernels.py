"""Compiled inner loops (numba).  Everything here is nogil so query blocks can
run on a thread pool; every output cell is written by exactly one loop
iteration, so results do not depend on how rows are distributed."""

from __future__ import annotations

import numba as nb
import numpy as np

_M1 = np.uint64(0x5555555555555555)
_M2 = np.uint64(0x3333333333333333)
_M4 = np.uint64(0x0F0F0F0F0F0F0F0F)
_H01 = np.uint64(0x0101010101010101)


@nb.njit(inline="always")
def popcount64(x):
    x = x - ((x >> np.uint64(1)) & _M1)
    x = (x & _M2) + ((x >> np.uint64(2)) & _M2)
    x = (x + (x >> np.uint64(4))) & _M4
    return (x * _H01) >> np.uint64(56)


@nb.njit(inline="always")
def _ham(a, b, i, j):
    d = np.uint64(0)
    for w in range(a.shape[1]):
        d += popcount64(a[i, w] ^ b[j, w])
    return np.int32(d)


@nb.njit(nogil=True, cache=True)
def hamming_matrix(qw, cw, out):
    """out[i, j] = Hamming(qw[i], cw[j])."""
    for i in range(qw.shape[0]):
        for j in range(cw.shape[0]):
            out[i, j] = _ham(qw, cw, i, j)


@nb.njit(nogil=True, cache=True)
def hamming_to_rows(qw, qi, cw, rows, out):
    """out[t] = Hamming(qw[qi], cw[rows[t]])."""
    for t in range(rows.shape[0]):
        out[t] = _ham(qw, cw, qi, rows[t])


@nb.njit(nogil=True, cache=True)
def hamming_topk(qw, cw, n_bits, k, out_idx, out_dist):
    """Exact top-k smallest Hamming distances per query.

    Candidates must be laid out in the order used to break ties (ascending
    ID); a counting pass over the ``n_bits + 1`` possible distances picks the
    threshold, a second pass emits columns in (distance, position) order.
    """
    n_c = cw.shape[0]
    dist = np.empty(n_c, dtype=np.int32)
    hist = np.empty(n_bits + 2, dtype=np.int64)
    offs = np.empty(n_bits + 2, dtype=np.int64)
    for i in range(qw.shape[0]):
        hist[:] = 0
        for j in range(n_c):
            d = _ham(qw, cw, i, j)
            dist[j] = d
            hist[d] += 1
        cum = 0
        t = 0
        while cum + hist[t] < k:
            cum += hist[t]
            t += 1
        offs[0] = 0
        for d in range(t):
            offs[d + 1] = offs[d] + hist[d]
        room = k - cum
        taken = 0
        for j in range(n_c):
            d = dist[j]
            if d < t:
                p = offs[d]
                out_idx[i, p] = j
                out_dist[i, p] = d
                offs[d] = p + 1
            elif d == t and taken < room:
                out_idx[i, cum + taken] = j
                out_dist[i, cum + taken] = d
                taken += 1


@nb.njit(nogil=True, cache=True)
def hamming_assign(cw, centroids):
    """Nearest centroid per code; ties go to the lowest centroid index."""
    n = cw.shape[0]
    assign = np.empty(n, dtype=np.int64)
    best_d = np.empty(n, dtype=np.int32)
    for i in range(n):
        best = -1
        bd = np.int32(1 << 30)
        for c in range(centroids.shape[0]):
            d = np.uint64(0)
            for w in range(cw.shape[1]):
                d += popcount64(cw[i, w] ^ centroids[c, w])
            if np.int32(d) < bd:
                bd = np.int32(d)
                best = c
        assign[i] = best
        best_d[i] = bd
    return assign, best_d


@nb.njit(nogil=True, cache=True)
def bit_counts(cw, assign, n_clusters, n_bits):
    """Per-cluster count of set bits at each position, plus cluster sizes."""
    counts = np.zeros((n_clusters, n_bits), dtype=np.int64)
    sizes = np.zeros(n_clusters, dtype=np.int64)
    for i in range(cw.shape[0]):
        c = assign[i]
        sizes[c] += 1
        for b in range(n_bits):
            if (cw[i, b >> 6] >> np.uint64(b & 63)) & np.uint64(1):
                counts[c, b] += 1
    return counts, sizes


# ---------------------------------------------------------------------------
# bounded top-k heaps for dense scores
#
# Each row keeps a binary heap whose root is the *worst* kept entry under the
# global order (score descending, then candidate ID ascending).  The set of
# the k best entries under a total order is unique, so the final rows do not
# depend on how candidates were chunked or in which order chunks arrived.


@nb.njit(inline="always")
def _worse(sa, ia, sb, ib):
    return sa < sb or (sa == sb and ia > ib)


@nb.njit(inline="always")
def _sift_down(hv, hi, hid, size, pos):
    while True:
        left = 2 * pos + 1
        if left >= size:
            return
        child = left
        right = left + 1
        if right < size and _worse(hv[right], hid[right], hv[left], hid[left]):
            child = right
        if _worse(hv[child], hid[child], hv[pos], hid[pos]):
            hv[pos], hv[child] = hv[child], hv[pos]
            hi[pos], hi[child] = hi[child], hi[pos]
            hid[pos], hid[child] = hid[child], hid[pos]
            pos = child
        else:
            return


@nb.njit(inline="always")
def _sift_up(hv, hi, hid, pos):
    while pos > 0:
        parent = (pos - 1) // 2
        if _worse(hv[pos], hid[pos], hv[parent], hid[parent]):
            hv[pos], hv[parent] = hv[parent], hv[pos]
            hi[pos], hi[parent] = hi[parent], hi[pos]
            hid[pos], hid[parent] = hid[parent], hid[pos]
            pos = parent
        else:
            return


@nb.njit(nogil=True, cache=True)
def topk_push(scores, col_offset, ids, heap_val, heap_idx, heap_id, fill):
    """Offer ``scores[:, j]`` (candidate position ``col_offset + j``) to each row's heap."""
    k = heap_val.shape[1]
    for r in range(scores.shape[0]):
        hv = heap_val[r]
        hi = heap_idx[r]
        hid = heap_id[r]
        size = fill[r]
        for j in range(scores.shape[1]):
            s = scores[r, j]
            p = col_offset + j
            cid = ids[p]
            if size < k:
                hv[size] = s
                hi[size] = p
                hid[size] = cid
                _sift_up(hv, hi, hid, size)
                size += 1
            elif _worse(hv[0], hid[0], s, cid):
                hv[0] = s
                hi[0] = p
                hid[0] = cid
                _sift_down(hv, hi, hid, size, 0)
        fill[r] = size


@nb.njit(nogil=True, cache=True)
def topk_finish(heap_val, heap_idx, heap_id, fill):
    """Sort every heap in place, best first (heap sort on the worst-at-root heap)."""
    for r in range(heap_val.shape[0]):
        hv = heap_val[r]
        hi = heap_idx[r]
        hid = heap_id[r]
        size = fill[r]
        # repeatedly move the worst entry to the end of the live region
        for end in range(size - 1, 0, -1):
            hv[0], hv[end] = hv[end], hv[0]
            hi[0], hi[end] = hi[end], hi[0]
            hid[0], hid[end] = hid[end], hid[0]
            _sift_down(hv, hi, hid, end, 0)
