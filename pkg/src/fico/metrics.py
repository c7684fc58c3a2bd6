"""Ranking and retrieval evaluation.

Ranking order is score descending with ties broken by ascending candidate
ID, everywhere.  Query-level values are accumulated in ascending query-ID
order with :func:`math.fsum`, so aggregated metrics do not depend on how
rows were batched.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from ._parallel import for_each_block
from .core import InstanceGroups, LabelMatrix, RankedRetrieval, SimilarityMatrix, EvalReport
from .exceptions import ValidationError

log = logging.getLogger(__name__)

RECALL_LEVELS = tuple(i / 10 for i in range(11))
AP_DENOMINATORS = ("found", "min_k_relevant")
_ROW_BLOCK = 512


def parse_ks(ks, n_candidates: int | None = None) -> list:
    """Accept ``"1,5,N"`` or an iterable; ``"N"`` stays symbolic unless ``n_candidates`` is given."""
    if isinstance(ks, str):
        ks = [x.strip() for x in ks.split(",") if x.strip()]
    out = []
    for k in ks:
        if isinstance(k, str) and k.upper() == "N":
            out.append("N" if n_candidates is None else int(n_candidates))
            continue
        try:
            k = int(k)
        except (TypeError, ValueError):
            raise ValidationError(f"invalid k value {k!r}") from None
        if k < 1:
            raise ValidationError(f"k must be >= 1, got {k}")
        out.append(k)
    if not out:
        raise ValidationError("no k values given")
    return out


def _resolve_k(k, n_c: int) -> int:
    kk = n_c if k == "N" else int(k)
    if not 1 <= kk <= n_c:
        raise ValidationError(f"k out of range: {k} (n_c = {n_c})")
    return kk


def _label(prefix: str, k) -> str:
    return f"{prefix}@{k}"


class TopK:
    """Running per-row top-k under the global order (score desc, then ID asc).

    Candidate blocks may be offered in any order and chunking; the result
    only depends on the full set offered.
    """

    def __init__(self, rows: int, k: int, cand_ids: np.ndarray):
        self.k = int(k)
        self.ids = np.ascontiguousarray(cand_ids, dtype=np.uint64)
        self.val = np.empty((rows, self.k), dtype=np.float32)
        self.idx = np.empty((rows, self.k), dtype=np.int64)
        self._hid = np.empty((rows, self.k), dtype=np.uint64)
        self.fill = np.zeros(rows, dtype=np.int64)

    def push(self, scores: np.ndarray, col_offset: int = 0) -> None:
        scores = np.ascontiguousarray(scores, dtype=np.float32)
        _kernels.topk_push(scores, int(col_offset), self.ids, self.val, self.idx, self._hid, self.fill)

    def result(self):
        """``(indices, values)``, best first; call once after the last push."""
        if np.any(self.fill < self.k):
            raise ValidationError(f"k out of range: fewer than {self.k} candidates offered")
        _kernels.topk_finish(self.val, self.idx, self._hid, self.fill)
        return self.idx, self.val


def select_topk(scores: np.ndarray, cand_ids: np.ndarray, k: int):
    """Top-k columns per row of a score block.

    Returns ``(indices, values)``, each ``rows x k``.
    """
    b, n = scores.shape
    if k > n:
        raise ValidationError(f"k out of range: {k} > {n}")
    top = TopK(b, k, cand_ids)
    top.push(scores)
    return top.result()


def rank_topk(sim: SimilarityMatrix, k, threads: int | None = None) -> RankedRetrieval:
    n_q, n_c = sim.shape
    k = _resolve_k(k, n_c)
    idx = np.empty((n_q, k), dtype=np.int64)
    val = np.empty((n_q, k), dtype=np.float32)

    def run(s, e):
        idx[s:e], val[s:e] = select_topk(sim.scores[s:e], sim.candidate_ids, k)

    for_each_block(run, n_q, _ROW_BLOCK, threads)
    return RankedRetrieval(sim.query_ids, sim.candidate_ids, idx, val)


def _relevance(ranked, k, is_relevant):
    if k < 1 or k > len(ranked):
        raise ValidationError(f"k out of range: {k} (ranked length {len(ranked)})")
    items = list(ranked)[:k]
    if is_relevant is None:
        return np.asarray([bool(x) for x in items])
    return np.asarray([bool(is_relevant(x)) for x in items])


def precision_at_k(ranked, k: int, is_relevant=None) -> float:
    """Fraction of the first ``k`` ranked items that are relevant.

    ``ranked`` is a sequence of items in rank order; without ``is_relevant``
    the items themselves are read as relevance flags.

    >>> precision_at_k([1, 0, 1], 3)
    0.6666666666666666
    """
    rel = _relevance(ranked, k, is_relevant)
    return int(rel.sum()) / k


def average_precision_at_k(ranked, k: int, is_relevant=None, denominator: str = "found",
                           n_relevant: int | None = None) -> float:
    """Mean of P@i over the relevant ranks ``i <= k``.

    ``denominator="found"`` divides by the relevant items inside the top k
    (0 when there are none); ``"min_k_relevant"`` divides by
    ``min(k, n_relevant)``.

    >>> average_precision_at_k([1, 0, 1], 3)
    0.8333333333333333
    """
    rel = _relevance(ranked, k, is_relevant)
    hits = np.cumsum(rel)
    found = int(hits[-1]) if len(hits) else 0
    total = math.fsum(hits[i] / (i + 1) for i in range(len(rel)) if rel[i])
    if denominator == "found":
        denom = found
    elif denominator == "min_k_relevant":
        if n_relevant is None:
            raise ValidationError("n_relevant is required for the min_k_relevant denominator")
        denom = min(k, int(n_relevant))
    else:
        raise ValidationError(f"unknown AP denominator {denominator!r}")
    return total / denom if denom else 0.0


def _query_order(query_ids) -> np.ndarray:
    return np.argsort(query_ids, kind="stable")


def _mean_in_order(values, order) -> float:
    if len(order) == 0:
        return 0.0
    return math.fsum(values[i] for i in order) / len(order)


def _check_unique(ids, what):
    if np.unique(ids).size != ids.size:
        raise ValidationError(f"duplicate {what} IDs in similarity matrix")


def eval_instance(sim: SimilarityMatrix, groups: InstanceGroups, direction: str, ks,
                  per_query: bool = False) -> EvalReport:
    """Instance-level recall.

    ``i2t`` queries are images and a query is a hit at k when any of its
    captions ranks within the top k (counted once).  ``t2i`` queries are
    captions and the single relevant candidate is the parent image.
    """
    if direction not in ("i2t", "t2i"):
        raise ValidationError(f"direction must be i2t or t2i, got {direction!r}")
    n_q, n_c = sim.shape
    ks = parse_ks(ks)
    kk = [_resolve_k(k, n_c) for k in ks]
    _check_unique(sim.query_ids, "query")
    _check_unique(sim.candidate_ids, "candidate")
    col_of = {int(c): j for j, c in enumerate(sim.candidate_ids.tolist())}
    cand_ids = sim.candidate_ids
    first_rank = np.empty(n_q, dtype=np.int64)
    for i, qid in enumerate(sim.query_ids.tolist()):
        if direction == "i2t":
            if qid not in groups.groups:
                raise ValidationError(f"direction/ID mismatch: query {qid} is not an image ID")
            relevant = [col_of[c] for c in groups.groups[qid] if c in col_of]
        else:
            if qid not in groups.inverse:
                raise ValidationError(f"direction/ID mismatch: query {qid} is not a caption ID")
            parent = groups.inverse[qid]
            relevant = [col_of[parent]] if parent in col_of else []
        if not relevant:
            raise ValidationError(f"query {qid} has no relevant candidate in the candidate set")
        row = sim.scores[i]
        rel = np.asarray(relevant)
        # best-ranked relevant item: highest score, then lowest ID
        best = rel[np.lexsort((cand_ids[rel], -row[rel]))[0]]
        s, cid = row[best], cand_ids[best]
        first_rank[i] = int(np.count_nonzero(row > s)) + int(np.count_nonzero((row == s) & (cand_ids < cid)))
    order = _query_order(sim.query_ids)
    metrics = {}
    for k, kval in zip(ks, kk):
        hits = (first_rank < kval).astype(np.float64)
        metrics[_label("R", k)] = _mean_in_order(hits, order)
    report = EvalReport(
        task="instance",
        direction=direction,
        metrics=metrics,
        meta={"n_queries": n_q, "n_candidates": n_c, "measure": sim.measure_tag, "ks": [str(k) for k in ks]},
    )
    if per_query:
        report.per_query = {int(q): int(r) + 1 for q, r in zip(sim.query_ids.tolist(), first_rank.tolist())}
    return report


@dataclass
class PRCurve:
    """Macro-averaged 11-point interpolated precision."""

    levels: tuple = RECALL_LEVELS
    precision: list = field(default_factory=list)
    counts: list = field(default_factory=list)
    per_query: dict | None = None

    def as_metrics(self) -> dict:
        return {f"P_interp@{r:.1f}": p for r, p in zip(self.levels, self.precision)}


def _relevance_block(q_ind, c_ind_T):
    return (q_ind.astype(np.int32) @ c_ind_T) > 0


def _category_pass(sim, query_labels, candidate_labels, depth, visit, threads=None):
    """Rank every query to ``depth`` and hand ranked relevance rows to ``visit``.

    ``visit(rows, rel_ranked, n_relevant)`` receives absolute row numbers, the
    ``rows x depth`` relevance of the ranked list and each row's total number of
    relevant candidates.
    """
    n_q, n_c = sim.shape
    q_ind = query_labels.indicator(sim.query_ids)
    c_ind_T = candidate_labels.indicator(sim.candidate_ids).T.astype(np.int32)
    if q_ind.shape[1] != c_ind_T.shape[0]:
        width = max(q_ind.shape[1], c_ind_T.shape[0])
        q_ind = np.pad(q_ind, ((0, 0), (0, width - q_ind.shape[1])))
        c_ind_T = np.pad(c_ind_T, ((0, width - c_ind_T.shape[0]), (0, 0)))

    def run(s, e):
        rel = _relevance_block(q_ind[s:e], c_ind_T)
        idx, _ = select_topk(sim.scores[s:e], sim.candidate_ids, depth)
        visit(np.arange(s, e), np.take_along_axis(rel, idx, axis=1), rel.sum(axis=1))

    for_each_block(run, n_q, _ROW_BLOCK, threads)


def eval_category(sim: SimilarityMatrix, query_labels: LabelMatrix, candidate_labels: LabelMatrix,
                  ks=("10", "100", "N"), include_N: bool = False, pr_curve: bool = False,
                  ap_denominator: str = "found", per_query: bool = False,
                  threads: int | None = None) -> EvalReport:
    """Category-level mAP@k (and P@k); relevance is any shared label.

    Queries without a single relevant candidate are left out of every average
    and counted in ``meta["excluded_queries"]``.
    """
    if ap_denominator not in AP_DENOMINATORS:
        raise ValidationError(f"unknown AP denominator {ap_denominator!r}")
    n_q, n_c = sim.shape
    ks = parse_ks(ks)
    if include_N and "N" not in ks and n_c not in ks:
        ks.append("N")
    kk = [_resolve_k(k, n_c) for k in ks]
    depth = n_c if pr_curve else max(kk)
    ap = np.zeros((len(ks), n_q))
    prec = np.zeros((len(ks), n_q))
    n_rel = np.zeros(n_q, dtype=np.int64)
    interp = np.zeros((11, n_q)) if pr_curve else None

    def visit(rows, rel, total):
        n_rel[rows] = total
        hits = np.cumsum(rel, axis=1)
        ranks = np.arange(1, rel.shape[1] + 1)
        p_at = hits / ranks
        contrib = np.where(rel, p_at, 0.0)
        csum = np.cumsum(contrib, axis=1)
        for t, kval in enumerate(kk):
            found = hits[:, kval - 1]
            if ap_denominator == "found":
                denom = found
            else:
                denom = np.minimum(kval, total)
            with np.errstate(invalid="ignore", divide="ignore"):
                ap[t, rows] = np.where(denom > 0, csum[:, kval - 1] / np.maximum(denom, 1), 0.0)
            prec[t, rows] = found / kval
        if interp is not None:
            interp[:, rows] = _interpolate_11(hits, p_at, total)

    _category_pass(sim, query_labels, candidate_labels, depth, visit, threads)
    order = [i for i in _query_order(sim.query_ids) if n_rel[i] > 0]
    excluded = n_q - len(order)
    metrics = {}
    for t, k in enumerate(ks):
        metrics[_label("mAP", k)] = _mean_in_order(ap[t], order)
        metrics[_label("P", k)] = _mean_in_order(prec[t], order)
    meta = {
        "n_queries": n_q,
        "n_candidates": n_c,
        "excluded_queries": excluded,
        "ap_denominator": ap_denominator,
        "measure": sim.measure_tag,
        "ks": [str(k) for k in ks],
    }
    if not order:
        log.warning("no query has a relevant candidate; mAP reported as 0")
        meta["warning"] = "no query has a relevant candidate"
    if interp is not None:
        for j, r in enumerate(RECALL_LEVELS):
            metrics[f"P_interp@{r:.1f}"] = _mean_in_order(interp[j], order)
        meta["pr_queries"] = len(order)
    report = EvalReport(task="category", metrics=metrics, meta=meta)
    if per_query:
        last = len(ks) - 1
        report.per_query = {int(sim.query_ids[i]): float(ap[last, i]) for i in order}
    return report


def _interpolate_11(hits, p_at, total) -> np.ndarray:
    """Interpolated precision at the eleven recall levels for each row.

    Level ``j/10`` takes the best precision at any rank whose recall
    ``hits/total`` reaches ``j/10``; compared as integers to avoid rounding.
    """
    rows, n = hits.shape
    out = np.zeros((11, rows))
    tail_max = np.maximum.accumulate(p_at[:, ::-1], axis=1)[:, ::-1]
    for r in range(rows):
        R = int(total[r])
        if R == 0:
            continue
        h10 = hits[r] * 10
        for j in range(11):
            pos = int(np.searchsorted(h10, j * R, side="left"))
            out[j, r] = tail_max[r, pos] if pos < n else 0.0
    return out


def pr_curve_11pt(sim: SimilarityMatrix, query_labels: LabelMatrix, candidate_labels: LabelMatrix,
                  per_query: bool = False, threads: int | None = None) -> PRCurve:
    n_q, n_c = sim.shape
    interp = np.zeros((11, n_q))
    n_rel = np.zeros(n_q, dtype=np.int64)

    def visit(rows, rel, total):
        n_rel[rows] = total
        hits = np.cumsum(rel, axis=1)
        p_at = hits / np.arange(1, rel.shape[1] + 1)
        interp[:, rows] = _interpolate_11(hits, p_at, total)

    _category_pass(sim, query_labels, candidate_labels, n_c, visit, threads)
    order = [i for i in _query_order(sim.query_ids) if n_rel[i] > 0]
    curve = PRCurve(
        precision=[_mean_in_order(interp[j], order) for j in range(11)],
        counts=[len(order)] * 11,
    )
    if per_query:
        curve.per_query = {int(sim.query_ids[i]): interp[:, i].tolist() for i in order}
    return curve
