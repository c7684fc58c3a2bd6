"""Hierarchical navigable small world graph index.

Insertion follows the usual scheme: a geometric level per node, greedy descent
through the upper layers, then a beam of width ``ef_construction`` on each
layer the node joins.  Neighbour selection is either the nearest ``M`` beam
results (``selection="simple"``, the default) or the diversity heuristic
(``"heuristic"``: a candidate is kept only if it is closer to the new node
than to every neighbour already kept).  Over-full lists are pruned with the
same rule.  On strongly clustered data the simple rule can leave layer 0
split into per-cluster components; the heuristic keeps bridges.  All heaps order by ``(distance, node)`` so builds are reproducible
from the seed and the insertion order.

Graph traversal uses its own float64 distances; the final ``k`` results are
re-scored through :mod:`fico.similarity` so reported scores match ``pairwise``
exactly.
"""

from __future__ import annotations

import heapq
import math

import numba as nb
import numpy as np

from .._parallel import for_each_block
from .._rng import numpy_generator
from ..core import MISSING
from ..exceptions import ValidationError
from ..metrics import select_topk
from ..similarity import Measure, check_compatible, dot_tiles, scores_from_dots, sq_norms
from .base import SearchIndex, check_embeddings, check_k

_IP, _L2 = 0, 1


@nb.njit(inline="always")
def _dist(X, q, j, metric):
    s = 0.0
    if metric == _IP:
        for t in range(X.shape[1]):
            s += q[t] * X[j, t]
        return -s
    for t in range(X.shape[1]):
        diff = q[t] - X[j, t]
        s += diff * diff
    return s


@nb.njit(inline="always")
def _neighbors(node, layer, nbr0, cnt0, up_slot, nbr_up, cnt_up):
    if layer == 0:
        return nbr0[node, : cnt0[node]]
    slot = up_slot[node]
    return nbr_up[slot, layer - 1, : cnt_up[slot, layer - 1]]


@nb.njit
def _search_layer(X, q, entry, ef, layer, metric, nbr0, cnt0, up_slot, nbr_up, cnt_up, visited, tag):
    """Beam search on one layer; returns (dist, node) pairs sorted ascending."""
    d0 = _dist(X, q, entry, metric)
    visited[entry] = tag
    cand = [(d0, entry)]
    res = [(-d0, -entry)]
    while len(cand) > 0:
        dc, c = heapq.heappop(cand)
        wd, wn = res[0]
        if (dc, c) > (-wd, -wn) and len(res) >= ef:
            break
        nbrs = _neighbors(c, layer, nbr0, cnt0, up_slot, nbr_up, cnt_up)
        for t in range(nbrs.shape[0]):
            e = nbrs[t]
            if visited[e] == tag:
                continue
            visited[e] = tag
            de = _dist(X, q, e, metric)
            wd, wn = res[0]
            if len(res) < ef or (de, e) < (-wd, -wn):
                heapq.heappush(cand, (de, e))
                heapq.heappush(res, (-de, -e))
                if len(res) > ef:
                    heapq.heappop(res)
    out_d = np.empty(len(res))
    out_n = np.empty(len(res), dtype=np.int64)
    pairs = [(-a, -b) for a, b in res]
    pairs.sort()
    for i in range(len(pairs)):
        out_d[i] = pairs[i][0]
        out_n[i] = pairs[i][1]
    return out_d, out_n


@nb.njit
def _select(X, dists, nodes, cap, metric, heuristic, out):
    """Pick up to ``cap`` of the candidates (sorted by ascending distance)."""
    m = 0
    if not heuristic:
        m = min(cap, nodes.shape[0])
        out[:m] = nodes[:m]
        return m
    for t in range(nodes.shape[0]):
        if m == cap:
            break
        e = nodes[t]
        keep = True
        for r in range(m):
            if _dist(X, X[out[r]], e, metric) < dists[t]:
                keep = False
                break
        if keep:
            out[m] = e
            m += 1
    return m


@nb.njit
def _shrink(X, node, layer, cap, metric, heuristic, nbr0, cnt0, up_slot, nbr_up, cnt_up):
    """Prune ``node``'s list on ``layer`` back to at most ``cap`` entries."""
    nbrs = _neighbors(node, layer, nbr0, cnt0, up_slot, nbr_up, cnt_up).copy()
    q = X[node]
    pairs = [(_dist(X, q, nbrs[t], metric), nbrs[t]) for t in range(nbrs.shape[0])]
    pairs.sort()
    dists = np.empty(len(pairs))
    nodes = np.empty(len(pairs), dtype=np.int64)
    for t in range(len(pairs)):
        dists[t] = pairs[t][0]
        nodes[t] = pairs[t][1]
    if layer == 0:
        cnt0[node] = _select(X, dists, nodes, cap, metric, heuristic, nbr0[node])
        nbr0[node, cnt0[node]:] = -1
    else:
        slot = up_slot[node]
        cnt_up[slot, layer - 1] = _select(X, dists, nodes, cap, metric, heuristic, nbr_up[slot, layer - 1])
        nbr_up[slot, layer - 1, cnt_up[slot, layer - 1]:] = -1


@nb.njit
def _add_edge(src, dst, layer, nbr0, cnt0, up_slot, nbr_up, cnt_up):
    """Append ``dst`` to ``src``'s list (one spare slot is always reserved)."""
    if layer == 0:
        nbr0[src, cnt0[src]] = dst
        cnt0[src] += 1
        return cnt0[src]
    slot = up_slot[src]
    nbr_up[slot, layer - 1, cnt_up[slot, layer - 1]] = dst
    cnt_up[slot, layer - 1] += 1
    return cnt_up[slot, layer - 1]


@nb.njit
def _build(X, levels, M, M0, ef_construction, metric, heuristic, nbr0, cnt0, up_slot, nbr_up, cnt_up):
    n = X.shape[0]
    visited = np.zeros(n, dtype=np.int64)
    tag = 0
    entry = 0
    top = levels[0]
    for i in range(1, n):
        q = X[i]
        li = levels[i]
        ep = entry
        for layer in range(top, li, -1):
            tag += 1
            _, w = _search_layer(X, q, ep, 1, layer, metric, nbr0, cnt0, up_slot, nbr_up, cnt_up, visited, tag)
            ep = w[0]
        for layer in range(min(top, li), -1, -1):
            tag += 1
            wd, wn = _search_layer(X, q, ep, ef_construction, layer, metric,
                                   nbr0, cnt0, up_slot, nbr_up, cnt_up, visited, tag)
            cap = M0 if layer == 0 else M
            chosen = np.empty(M, dtype=np.int64)
            m = _select(X, wd, wn, M, metric, heuristic, chosen)
            for t in range(m):
                _add_edge(i, chosen[t], layer, nbr0, cnt0, up_slot, nbr_up, cnt_up)
            for t in range(m):
                e = chosen[t]
                if _add_edge(e, i, layer, nbr0, cnt0, up_slot, nbr_up, cnt_up) > cap:
                    _shrink(X, e, layer, cap, metric, heuristic, nbr0, cnt0, up_slot, nbr_up, cnt_up)
            ep = wn[0]
        if li > top:
            top = li
            entry = i
    return entry


@nb.njit(nogil=True)
def _search(X, Q, entry, top, ef, metric, nbr0, cnt0, up_slot, nbr_up, cnt_up, out):
    visited = np.zeros(X.shape[0], dtype=np.int64)
    tag = 0
    for i in range(Q.shape[0]):
        q = Q[i]
        ep = entry
        for layer in range(top, 0, -1):
            tag += 1
            _, w = _search_layer(X, q, ep, 1, layer, metric, nbr0, cnt0, up_slot, nbr_up, cnt_up, visited, tag)
            ep = w[0]
        tag += 1
        _, w = _search_layer(X, q, ep, ef, 0, metric, nbr0, cnt0, up_slot, nbr_up, cnt_up, visited, tag)
        out[i, :] = -1
        out[i, : w.shape[0]] = w


class HNSWIndex(SearchIndex):
    """Layered proximity-graph index for dense vectors.

    Parameters
    ----------
    M : int
        Neighbours linked per node on each layer above 0.
    M0 : int or None
        Neighbour cap on layer 0; defaults to ``2 * M``.
    ef_construction, ef_search : int
        Beam widths for insertion and for queries.
    measure : {"inner_product", "cosine", "euclidean"}
    seed : int
        Seeds the level assignment.
    selection : {"simple", "heuristic"}
        Neighbour selection rule (see module docstring).
    """

    kind = "hnsw"

    def __init__(self, M=32, ef_construction=200, ef_search=128, measure="inner_product", seed=0,
                 M0=None, selection="simple", query_block=256, threads=None):
        self.M = M
        self.ef_construction = ef_construction
        self.ef_search = ef_search
        self.measure = measure
        self.seed = seed
        self.M0 = M0
        self.selection = selection
        self.query_block = query_block
        self.threads = threads

    def _graph_space(self, values):
        x = np.asarray(values, dtype=np.float64)
        if self.measure_ is Measure.COSINE:
            norms = np.linalg.norm(x, axis=1)
            if np.any(norms == 0):
                raise ValidationError("zero-norm row under cosine")
            x = x / norms[:, None]
        return np.ascontiguousarray(x)

    def fit(self, X, y=None):
        X = check_embeddings(X)
        if self.M < 2:
            raise ValidationError(f"M must be >= 2, got {self.M}")
        if self.ef_construction < 1:
            raise ValidationError("ef_construction must be >= 1")
        self.measure_ = Measure.parse(self.measure)
        if self.measure_ is Measure.HAMMING:
            raise ValidationError("HNSWIndex needs a dense measure")
        M = int(self.M)
        M0 = int(self.M0) if self.M0 is not None else 2 * M
        if M0 < M:
            raise ValidationError("M0 must be >= M")
        if self.selection not in ("simple", "heuristic"):
            raise ValidationError(f"selection must be 'simple' or 'heuristic', got {self.selection!r}")
        n = X.n
        self.data_ = X
        self.ids_ = X.ids
        self.metric_ = _L2 if self.measure_ is Measure.EUCLIDEAN else _IP
        self.graph_x_ = self._graph_space(X.values)
        rng = numpy_generator(self.seed, "hnsw-levels")
        u = 1.0 - rng.random(n)  # (0, 1]
        levels = np.floor(-np.log(u) / math.log(M)).astype(np.int64)
        self.levels_ = levels
        self.max_level_ = int(levels.max()) if n else 0
        upper = np.nonzero(levels > 0)[0]
        self.up_slot_ = np.full(n, -1, dtype=np.int64)
        self.up_slot_[upper] = np.arange(upper.size)
        # one spare slot per list: edges are appended before the list is cut back
        self.nbr0_ = np.full((n, M0 + 1), -1, dtype=np.int64)
        self.cnt0_ = np.zeros(n, dtype=np.int64)
        self.nbr_up_ = np.full((upper.size, max(self.max_level_, 1), M + 1), -1, dtype=np.int64)
        self.cnt_up_ = np.zeros((upper.size, max(self.max_level_, 1)), dtype=np.int64)
        self.entry_ = 0
        if n > 1:
            heuristic = self.selection == "heuristic"
            self.entry_ = int(_build(self.graph_x_, levels, M, M0, int(self.ef_construction), self.metric_, heuristic,
                                     self.nbr0_, self.cnt0_, self.up_slot_, self.nbr_up_, self.cnt_up_))
        self.sq_norms_ = None if self.measure_ is Measure.INNER_PRODUCT else sq_norms(X.values)
        return self

    def state_arrays(self) -> dict:
        return {
            "ids": self.ids_,
            "levels": self.levels_,
            "nbr0": self.nbr0_,
            "cnt0": self.cnt0_,
            "nbr_up": self.nbr_up_,
            "cnt_up": self.cnt_up_,
            "entry": np.array([self.entry_]),
        }

    def layer_neighbors(self, node: int, layer: int = 0) -> np.ndarray:
        self._check_fitted()
        if layer == 0:
            return self.nbr0_[node, : self.cnt0_[node]]
        slot = self.up_slot_[node]
        if slot < 0 or layer > self.levels_[node]:
            return np.empty(0, dtype=np.int64)
        return self.nbr_up_[slot, layer - 1, : self.cnt_up_[slot, layer - 1]]

    def layer_nodes(self, layer: int) -> np.ndarray:
        self._check_fitted()
        return np.nonzero(self.levels_ >= layer)[0]

    def search(self, queries, k, ef_search=None):
        self._check_fitted()
        queries = check_embeddings(queries, "queries")
        check_compatible(queries, self.data_, self.measure_)
        k = check_k(k, len(self))
        ef = int(self.ef_search if ef_search is None else ef_search)
        if ef < k:
            raise ValidationError(f"ef_search must be >= k ({ef} < {k})")
        nq = queries.n
        qx = self._graph_space(queries.values)
        cand = np.empty((nq, ef), dtype=np.int64)

        def run(s, e):
            _search(self.graph_x_, qx[s:e], self.entry_, self.max_level_, ef, self.metric_,
                    self.nbr0_, self.cnt0_, self.up_slot_, self.nbr_up_, self.cnt_up_, cand[s:e])

        for_each_block(run, nq, max(1, int(self.query_block)), self.threads)
        q_sq = None if self.sq_norms_ is None else sq_norms(queries.values)
        idx = np.full((nq, k), MISSING, dtype=np.int64)
        val = np.full((nq, k), np.nan, dtype=np.float32)
        base = self.data_.values
        for i in range(nq):
            rows = cand[i][cand[i] >= 0]
            dots = dot_tiles(np.asarray(queries.values[i : i + 1]), np.asarray(base[rows]))
            sc = scores_from_dots(dots, self.measure_, None if q_sq is None else q_sq[i : i + 1],
                                  None if self.sq_norms_ is None else self.sq_norms_[rows])
            m = min(k, rows.size)
            sel, v = select_topk(sc, self.ids_[rows], m)
            idx[i, :m] = rows[sel[0]]
            val[i, :m] = v[0]
        return self._retrieval(queries.ids, idx, val)


def build_hnsw(data, M=32, ef_construction=200, seed=0, measure="inner_product", **kw) -> HNSWIndex:
    return HNSWIndex(M=M, ef_construction=ef_construction, seed=seed, measure=measure, **kw).fit(data)


def search_hnsw(index: HNSWIndex, queries, k, ef_search=None):
    return index.search(queries, k, ef_search=ef_search)
