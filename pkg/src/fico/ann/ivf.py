"""Inverted-file index over packed binary codes.

Coarse centroids are trained by k-majority clustering (k-means with Hamming
distance and a bitwise-majority centroid update).  Queries scan the inverted
lists of their ``nprobe`` nearest centroids.
"""

from __future__ import annotations

import logging

import numba as nb
import numpy as np

from .. import _kernels
from .._parallel import for_each_block
from .._rng import numpy_generator
from ..core import BinaryCodeSet, MISSING
from ..exceptions import ValidationError
from .base import SearchIndex, check_codes, check_k

log = logging.getLogger(__name__)


def _majority_update(counts, sizes, prev_bits):
    """Set each bit to the members' majority; exact ties keep the previous bit."""
    twice = 2 * counts
    new_bits = np.where(twice > sizes[:, None], True, np.where(twice < sizes[:, None], False, prev_bits))
    empty = sizes == 0
    new_bits[empty] = prev_bits[empty]
    return new_bits


def _bits_to_words(bits):
    return BinaryCodeSet.from_bits(bits).words


def _words_to_bits(words, n_bits):
    return BinaryCodeSet(ids=np.arange(words.shape[0]), words=words, code_bits=n_bits).to_bits()


def _reseed_empty(words, assign, dist, centroids, n_bits):
    """Give each empty cluster the farthest member of the currently largest cluster."""
    n_clusters = centroids.shape[0]
    sizes = np.bincount(assign, minlength=n_clusters)
    for c in np.nonzero(sizes == 0)[0]:
        big = int(np.argmax(sizes))  # lowest index among the largest
        if sizes[big] <= 1:
            break
        members = np.nonzero(assign == big)[0]
        far = members[np.argmax(dist[members])]  # lowest row among the farthest
        centroids[c] = words[far]
        assign[far] = c
        dist[far] = 0
        sizes[big] -= 1
        sizes[c] = 1
    return assign, dist


def train_kmajority(words, n_bits, nlist, n_iter, seed):
    n = words.shape[0]
    rng = numpy_generator(seed, "ivf-init")
    uniq, first = np.unique(words, axis=0, return_index=True)
    if uniq.shape[0] >= nlist:
        pick = np.sort(first)[np.sort(rng.choice(uniq.shape[0], size=nlist, replace=False))]
    else:
        pick = np.sort(rng.choice(n, size=nlist, replace=False))
    centroids = np.ascontiguousarray(words[pick])
    for _ in range(n_iter):
        assign, dist = _kernels.hamming_assign(words, centroids)
        assign, dist = _reseed_empty(words, assign, dist, centroids, n_bits)
        counts, sizes = _kernels.bit_counts(words, assign, nlist, n_bits)
        prev = _words_to_bits(centroids, n_bits)
        centroids = np.ascontiguousarray(_bits_to_words(_majority_update(counts, sizes, prev)))
    assign, _ = _kernels.hamming_assign(words, centroids)
    return centroids, assign


@nb.njit(nogil=True, cache=True)
def _ivf_search(qw, cw, centroids, offsets, members, nprobe, k, n_bits, out_pos, out_dist):
    nlist = centroids.shape[0]
    cdist = np.empty(nlist, dtype=np.int32)
    hist = np.empty(n_bits + 2, dtype=np.int64)
    offs = np.empty(n_bits + 2, dtype=np.int64)
    for i in range(qw.shape[0]):
        for c in range(nlist):
            d = np.uint64(0)
            for w in range(qw.shape[1]):
                d += _kernels.popcount64(qw[i, w] ^ centroids[c, w])
            cdist[c] = np.int32(d)
        probe = np.argsort(cdist, kind="mergesort")[:nprobe]
        total = 0
        for t in range(nprobe):
            c = probe[t]
            total += offsets[c + 1] - offsets[c]
        pos = np.empty(total, dtype=np.int64)
        p = 0
        for t in range(nprobe):
            c = probe[t]
            for m in range(offsets[c], offsets[c + 1]):
                pos[p] = members[m]
                p += 1
        pos = np.sort(pos)
        dist = np.empty(total, dtype=np.int32)
        hist[:] = 0
        for j in range(total):
            d = np.uint64(0)
            for w in range(qw.shape[1]):
                d += _kernels.popcount64(qw[i, w] ^ cw[pos[j], w])
            dist[j] = np.int32(d)
            hist[dist[j]] += 1
        want = min(k, total)
        for s in range(want, k):
            out_pos[i, s] = -1
            out_dist[i, s] = -1
        if want == 0:
            continue
        cum = 0
        th = 0
        while cum + hist[th] < want:
            cum += hist[th]
            th += 1
        offs[0] = 0
        for d in range(th):
            offs[d + 1] = offs[d] + hist[d]
        room = want - cum
        taken = 0
        for j in range(total):
            d = dist[j]
            if d < th:
                q = offs[d]
                out_pos[i, q] = pos[j]
                out_dist[i, q] = d
                offs[d] = q + 1
            elif d == th and taken < room:
                out_pos[i, cum + taken] = pos[j]
                out_dist[i, cum + taken] = d
                taken += 1


class BinaryIVFIndex(SearchIndex):
    """Hamming IVF index.

    Parameters
    ----------
    nlist : int
        Number of inverted lists / coarse centroids.
    nprobe : int
        Lists scanned per query (overridable per search call).
    n_iter : int
        k-majority iterations.
    seed : int
        Seeds centroid initialisation.
    """

    kind = "bivf"

    def __init__(self, nlist=256, nprobe=32, n_iter=10, seed=0, query_block=256, threads=None):
        self.nlist = nlist
        self.nprobe = nprobe
        self.n_iter = n_iter
        self.seed = seed
        self.query_block = query_block
        self.threads = threads

    def fit(self, X, y=None):
        X = check_codes(X)
        if self.nlist < 1 or self.nlist > X.n:
            raise ValidationError(f"nlist must be in [1, n={X.n}], got {self.nlist}")
        if not 1 <= self.nprobe <= self.nlist:
            raise ValidationError(f"nprobe out of range: {self.nprobe} (nlist = {self.nlist})")
        if self.n_iter < 1:
            raise ValidationError("n_iter must be >= 1")
        self.code_bits_ = X.code_bits
        self.ids_ = X.ids
        self.order_ = np.argsort(X.ids, kind="stable")
        words = np.ascontiguousarray(X.words[self.order_])
        self.sorted_words_ = words
        self.centroids_, assign = train_kmajority(words, X.code_bits, int(self.nlist), int(self.n_iter), self.seed)
        # members are positions in ID-sorted order, ascending within each list
        self.list_members_ = np.argsort(assign, kind="stable").astype(np.int64)
        sizes = np.bincount(assign, minlength=int(self.nlist))
        self.list_offsets_ = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        return self

    @property
    def list_sizes_(self) -> np.ndarray:
        return np.diff(self.list_offsets_)

    def inverted_lists(self) -> list:
        """Candidate IDs held by each list."""
        self._check_fitted()
        ids_sorted = self.ids_[self.order_]
        return [
            ids_sorted[self.list_members_[self.list_offsets_[c] : self.list_offsets_[c + 1]]]
            for c in range(len(self.list_offsets_) - 1)
        ]

    def state_arrays(self) -> dict:
        return {
            "ids": self.ids_,
            "words": self.sorted_words_,
            "centroids": self.centroids_,
            "members": self.list_members_,
            "offsets": self.list_offsets_,
        }

    def search(self, queries, k, nprobe=None):
        self._check_fitted()
        queries = check_codes(queries, "queries")
        if queries.code_bits != self.code_bits_:
            raise ValidationError(f"code length mismatch: {queries.code_bits} vs {self.code_bits_} bits")
        nlist = self.centroids_.shape[0]
        nprobe = int(self.nprobe if nprobe is None else nprobe)
        if not 1 <= nprobe <= nlist:
            raise ValidationError(f"nprobe out of range: {nprobe} (nlist = {nlist})")
        k = check_k(k, len(self))
        nq = queries.n
        pos = np.empty((nq, k), dtype=np.int64)
        dist = np.empty((nq, k), dtype=np.int32)

        def run(s, e):
            _ivf_search(queries.words[s:e], self.sorted_words_, self.centroids_, self.list_offsets_,
                        self.list_members_, nprobe, k, self.code_bits_, pos[s:e], dist[s:e])

        for_each_block(run, nq, max(1, int(self.query_block)), self.threads)
        missing = pos < 0
        idx = np.where(missing, MISSING, self.order_[np.where(missing, 0, pos)])
        scores = np.where(missing, np.nan, -dist.astype(np.float32)).astype(np.float32)
        return self._retrieval(queries.ids, idx, scores)


def train_binary_ivf(codes, nlist=256, iters=10, seed=0, **kw) -> BinaryIVFIndex:
    return BinaryIVFIndex(nlist=nlist, n_iter=iters, seed=seed, **kw).fit(codes)


def search_binary_ivf(index: BinaryIVFIndex, queries, k, nprobe=None):
    return index.search(queries, k, nprobe=nprobe)
