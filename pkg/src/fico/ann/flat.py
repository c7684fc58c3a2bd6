"""Exhaustive indexes: the ground truth every approximate index is scored against."""

from __future__ import annotations

import numpy as np

from .. import _kernels
from .._parallel import for_each_block
from ..metrics import TopK
from ..similarity import (
    CANDIDATE_TILE,
    QUERY_TILE,
    Measure,
    check_compatible,
    dot_tiles,
    scores_from_dots,
    sq_norms,
)
from ..exceptions import ValidationError
from .base import SearchIndex, check_codes, check_embeddings, check_k


class FlatIndex(SearchIndex):
    """Brute-force dense search; equal to ``pairwise`` + ``rank_topk`` bit for bit.

    Candidates are streamed in chunks and a running top-k is merged, so the
    stored set may be a disk-backed memmap larger than memory.

    Parameters
    ----------
    measure : {"inner_product", "cosine", "euclidean"}
    query_block, candidate_block : int
        Scheduling only; rounded up to multiples of the similarity tile.
    threads : int or None
        Parallel query blocks (``None`` reads FICO_THREADS).
    """

    kind = "flat"

    def __init__(self, measure="inner_product", query_block=2048, candidate_block=16384, threads=None):
        self.measure = measure
        self.query_block = query_block
        self.candidate_block = candidate_block
        self.threads = threads

    def fit(self, X, y=None):
        X = check_embeddings(X)
        measure = Measure.parse(self.measure)
        if measure is Measure.HAMMING:
            raise ValidationError("FlatIndex needs a dense measure; use BinaryFlatIndex for hamming")
        self.measure_ = measure
        self.data_ = X
        self.ids_ = X.ids
        self.sq_norms_ = None if measure is Measure.INNER_PRODUCT else sq_norms(X.values)
        if measure is Measure.COSINE and np.any(self.sq_norms_ == 0):
            row = int(np.nonzero(self.sq_norms_ == 0)[0][0])
            raise ValidationError(f"zero-norm row under cosine, id={int(X.ids[row])}")
        return self

    def state_arrays(self) -> dict:
        return {"ids": self.ids_, "values": np.asarray(self.data_.values)}

    def search(self, queries, k):
        self._check_fitted()
        queries = check_embeddings(queries, "queries")
        check_compatible(queries, self.data_, self.measure_)
        n, nq = len(self), queries.n
        k = check_k(k, n)
        q_sq = None if self.sq_norms_ is None else sq_norms(queries.values)
        if self.measure_ is Measure.COSINE and np.any(q_sq == 0):
            raise ValidationError("zero-norm query row under cosine")
        qb = -(-max(1, int(self.query_block)) // QUERY_TILE) * QUERY_TILE
        cb = -(-max(1, int(self.candidate_block)) // CANDIDATE_TILE) * CANDIDATE_TILE
        idx = np.empty((nq, k), dtype=np.int64)
        val = np.empty((nq, k), dtype=np.float32)
        base, ids, c_sq = self.data_.values, self.ids_, self.sq_norms_

        def run(s, e):
            qv = np.asarray(queries.values[s:e])
            qs = None if q_sq is None else q_sq[s:e]
            top = TopK(e - s, k, ids)
            for cs in range(0, n, cb):
                ce = min(cs + cb, n)
                dots = dot_tiles(qv, base[cs:ce])
                top.push(scores_from_dots(dots, self.measure_, qs, None if c_sq is None else c_sq[cs:ce]), cs)
                del dots
            idx[s:e], val[s:e] = top.result()

        for_each_block(run, nq, qb, self.threads)
        return self._retrieval(queries.ids, idx, val)


class BinaryFlatIndex(SearchIndex):
    """Brute-force Hamming search over packed codes.

    Codes are stored in ascending-ID order so that a stable counting
    selection over distances reproduces the global tie rule directly.
    """

    kind = "bflat"

    def __init__(self, query_block=256, threads=None):
        self.query_block = query_block
        self.threads = threads

    def fit(self, X, y=None):
        X = check_codes(X)
        self.code_bits_ = X.code_bits
        self.ids_ = X.ids
        self.order_ = np.argsort(X.ids, kind="stable")
        self.sorted_words_ = np.ascontiguousarray(X.words[self.order_])
        return self

    def state_arrays(self) -> dict:
        return {"ids": self.ids_, "words": self.sorted_words_}

    def search(self, queries, k):
        self._check_fitted()
        queries = check_codes(queries, "queries")
        if queries.code_bits != self.code_bits_:
            raise ValidationError(f"code length mismatch: {queries.code_bits} vs {self.code_bits_} bits")
        k = check_k(k, len(self))
        nq = queries.n
        pos = np.empty((nq, k), dtype=np.int64)
        dist = np.empty((nq, k), dtype=np.int32)

        def run(s, e):
            _kernels.hamming_topk(queries.words[s:e], self.sorted_words_, self.code_bits_, k, pos[s:e], dist[s:e])

        for_each_block(run, nq, max(1, int(self.query_block)), self.threads)
        idx = self.order_[pos]
        return self._retrieval(queries.ids, idx, -dist.astype(np.float32))


def build_flat(data, measure="inner_product", **kw) -> FlatIndex:
    return FlatIndex(measure=measure, **kw).fit(data)


def search_flat(index: FlatIndex, queries, k):
    return index.search(queries, k)


def build_binary_flat(codes, **kw) -> BinaryFlatIndex:
    return BinaryFlatIndex(**kw).fit(codes)


def search_binary_flat(index: BinaryFlatIndex, queries, k):
    return index.search(queries, k)


__all__ = [
    "FlatIndex",
    "BinaryFlatIndex",
    "build_flat",
    "search_flat",
    "build_binary_flat",
    "search_binary_flat",
]
