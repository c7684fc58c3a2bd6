from __future__ import annotations

import math

import numpy as np

from ..core import EvalReport, RankedRetrieval
from ..exceptions import ValidationError


def recall_vs_baseline(results: RankedRetrieval, baseline: RankedRetrieval, ks, mode: str = "top1") -> EvalReport:
    """Recall of an index against exhaustive ground truth.

    ``mode="top1"``: R@k is the fraction of queries whose baseline rank-1
    candidate appears in the first k results.  ``mode="overlap"``: mean
    ``|top-k(results) & top-k(baseline)| / k``.
    """
    if mode not in ("top1", "overlap"):
        raise ValidationError(f"unknown recall mode {mode!r}")
    ks = [int(k) for k in ks]
    if not ks or min(ks) < 1:
        raise ValidationError("ks must be positive")
    if not np.array_equal(results.query_ids, baseline.query_ids):
        raise ValidationError("results and baseline cover different query sets")
    kmax = max(ks)
    if baseline.k < kmax:
        raise ValidationError(f"depth insufficient: baseline depth {baseline.k} < {kmax}")
    if results.k < kmax:
        raise ValidationError(f"depth insufficient: result depth {results.k} < {kmax}")
    got = results.result_ids()
    truth = baseline.result_ids()
    order = np.argsort(results.query_ids, kind="stable")
    nq = got.shape[0]
    metrics = {}
    for k in ks:
        if mode == "top1":
            hit = np.any(got[:, :k] == truth[:, :1], axis=1) & (truth[:, 0] >= 0)
            vals = hit.astype(np.float64)
        else:
            vals = np.empty(nq)
            for i in range(nq):
                a = got[i, :k]
                b = truth[i, :k]
                vals[i] = np.intersect1d(a[a >= 0], b[b >= 0]).size / k
        metrics[f"R@{k}"] = math.fsum(vals[order]) / nq if nq else 0.0
    return EvalReport(task="bench", metrics=metrics, meta={"recall_mode": mode, "n_queries": nq})
