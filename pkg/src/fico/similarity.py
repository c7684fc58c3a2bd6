"""Pairwise similarity under the four supported measures.

Every measure is expressed as a similarity where larger is better:

=============  ==========================================
hamming        ``-popcount(q XOR c)``   (packed codes only)
inner_product  ``q . c``
cosine         ``q . c / (|q| |c|)``
euclidean      ``-|q - c|``
=============  ==========================================

Dot products are accumulated in float64 on fixed-shape, zero-padded tiles of
``QUERY_TILE x CANDIDATE_TILE`` rows.  BLAS picks its summation order from the
call shape, so pinning the shape makes each cell a function of its two input
rows only: results are bitwise identical for any block size, thread count,
candidate subset or permutation.
"""

from __future__ import annotations

import enum

import numpy as np

from . import _kernels
from ._parallel import for_each_block
from .core import BinaryCodeSet, SignedCodeView, SimilarityMatrix
from .exceptions import ValidationError

QUERY_TILE = 256
CANDIDATE_TILE = 1024


class Measure(str, enum.Enum):
    HAMMING = "hamming"
    INNER_PRODUCT = "inner_product"
    COSINE = "cosine"
    EUCLIDEAN = "euclidean"

    @classmethod
    def parse(cls, value) -> "Measure":
        if isinstance(value, cls):
            return value
        key = str(value).lower()
        key = {"ip": "inner_product", "dot": "inner_product", "l2": "euclidean", "cos": "cosine"}.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValidationError(f"unknown measure {value!r}") from None


def _padded(x, rows_mult: int) -> np.ndarray:
    n, d = x.shape
    out = np.zeros((-(-n // rows_mult) * rows_mult, d), dtype=np.float64)
    out[:n] = x
    return out


def dot_tiles(q, c) -> np.ndarray:
    """``q @ c.T`` in float64, computed tile by tile at the pinned tile shape."""
    q = np.asarray(q)
    c = np.asarray(c)
    if q.ndim != 2 or c.ndim != 2 or q.shape[1] != c.shape[1]:
        raise ValidationError(f"dimension mismatch: {q.shape} vs {c.shape}")
    nq, nc = q.shape[0], c.shape[0]
    out = np.empty((nq, nc), dtype=np.float64)
    if nq == 0 or nc == 0:
        return out
    qp = _padded(q, QUERY_TILE)
    cp = _padded(c, CANDIDATE_TILE)
    tile = np.empty((QUERY_TILE, CANDIDATE_TILE), dtype=np.float64)
    for cs in range(0, nc, CANDIDATE_TILE):
        ce = min(cs + CANDIDATE_TILE, nc)
        ct = cp[cs : cs + CANDIDATE_TILE]
        for qs in range(0, nq, QUERY_TILE):
            qe = min(qs + QUERY_TILE, nq)
            np.matmul(qp[qs : qs + QUERY_TILE], ct.T, out=tile)
            out[qs:qe, cs:ce] = tile[: qe - qs, : ce - cs]
    return out


def sq_norms(x) -> np.ndarray:
    """Squared row norms, bitwise equal to the self-entries of :func:`dot_tiles`."""
    x = np.asarray(x)
    n, d = x.shape
    out = np.empty(n, dtype=np.float64)
    qbuf = np.zeros((QUERY_TILE, d), dtype=np.float64)
    cbuf = np.zeros((CANDIDATE_TILE, d), dtype=np.float64)
    tile = np.empty((QUERY_TILE, CANDIDATE_TILE), dtype=np.float64)
    for s in range(0, n, QUERY_TILE):
        e = min(s + QUERY_TILE, n)
        m = e - s
        qbuf[:m] = x[s:e]
        qbuf[m:] = 0.0
        cbuf[:m] = qbuf[:m]
        cbuf[m:] = 0.0
        np.matmul(qbuf, cbuf.T, out=tile)
        out[s:e] = np.diagonal(tile)[:m]
    return out


def scores_from_dots(dots, measure: Measure, q_sq=None, c_sq=None) -> np.ndarray:
    """Turn a float64 dot-product block into float32 similarities."""
    if measure is Measure.INNER_PRODUCT:
        return dots.astype(np.float32)
    if measure is Measure.COSINE:
        denom = np.sqrt(q_sq)[:, None] * np.sqrt(c_sq)[None, :]
        cos = dots / denom
        np.clip(cos, -1.0, 1.0, out=cos)
        return cos.astype(np.float32)
    if measure is Measure.EUCLIDEAN:
        sq = (q_sq[:, None] + c_sq[None, :]) - 2.0 * dots
        np.maximum(sq, 0.0, out=sq)
        return (-np.sqrt(sq)).astype(np.float32)
    raise ValidationError(f"{measure.value} is not a dense measure")


def hamming_distance(a, b) -> int:
    """Number of differing bits between two packed codes.

    ``a`` and ``b`` are 1-D uint64 word arrays (or Python ints for codes of up
    to 64 bits) of equal length.
    """
    if isinstance(a, (int, np.integer)) and isinstance(b, (int, np.integer)):
        return (int(a) ^ int(b)).bit_count()
    a = np.asarray(a, dtype=np.uint64).reshape(-1)
    b = np.asarray(b, dtype=np.uint64).reshape(-1)
    if a.shape != b.shape:
        raise ValidationError(f"code length mismatch: {a.size} vs {b.size} words")
    out = np.empty((1, 1), dtype=np.int32)
    _kernels.hamming_matrix(a[None, :], b[None, :], out)
    return int(out[0, 0])


def signed_view(codes: BinaryCodeSet, dtype=np.float32) -> SignedCodeView:
    """Map bit 1 -> +1.0 and bit 0 -> -1.0, one column per bit in bit order."""
    bits = codes.to_bits()
    values = np.where(bits, 1.0, -1.0).astype(dtype)
    return SignedCodeView(ids=codes.ids, values=values, code_bits=codes.code_bits)


def check_compatible(queries, candidates, measure: Measure) -> None:
    if measure is Measure.HAMMING:
        if not (isinstance(queries, BinaryCodeSet) and isinstance(candidates, BinaryCodeSet)):
            raise ValidationError("hamming applies only to packed binary codes")
        if queries.code_bits != candidates.code_bits:
            raise ValidationError(f"code length mismatch: {queries.code_bits} vs {candidates.code_bits} bits")
        return
    if isinstance(queries, BinaryCodeSet) or isinstance(candidates, BinaryCodeSet):
        raise ValidationError(f"{measure.value} needs dense vectors; use signed_view() on binary codes")
    if queries.dim != candidates.dim:
        raise ValidationError(f"dimension mismatch: {queries.dim} vs {candidates.dim}")


def pairwise(queries, candidates, measure="inner_product", threads: int | None = None,
             block_rows: int = QUERY_TILE) -> SimilarityMatrix:
    """Full query x candidate similarity matrix.

    ``block_rows`` and ``threads`` only change how work is scheduled; the
    output is bitwise identical for every choice.
    """
    measure = Measure.parse(measure)
    check_compatible(queries, candidates, measure)
    nq, nc = queries.n, candidates.n
    scores = np.empty((nq, nc), dtype=np.float32)
    if measure is Measure.HAMMING:
        dist = np.empty((nq, nc), dtype=np.int32)

        def run(s, e):
            _kernels.hamming_matrix(queries.words[s:e], candidates.words, dist[s:e])
            np.negative(dist[s:e], out=scores[s:e], casting="unsafe")

    else:
        q_sq = c_sq = None
        if measure is not Measure.INNER_PRODUCT:
            q_sq = sq_norms(queries.values)
            c_sq = sq_norms(candidates.values)
            if measure is Measure.COSINE:
                for name, sq, es in (("query", q_sq, queries), ("candidate", c_sq, candidates)):
                    zero = np.nonzero(sq == 0)[0]
                    if zero.size:
                        raise ValidationError(f"zero-norm {name} row under cosine, id={int(es.ids[zero[0]])}")

        def run(s, e):
            dots = dot_tiles(queries.values[s:e], candidates.values)
            scores[s:e] = scores_from_dots(
                dots, measure, None if q_sq is None else q_sq[s:e], c_sq
            )

    for_each_block(run, nq, max(1, int(block_rows)), threads)
    return SimilarityMatrix(queries.ids, candidates.ids, scores, measure.value)
