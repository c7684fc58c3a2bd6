"""Timing and storage accounting across scale tiers.

Timings are wall-clock from a monotonic clock and cover pure search with
data resident in memory (no file I/O).  They live in the ``timing`` field of
every report and are the only values outside the byte-determinism contract.
"""

from __future__ import annotations

import csv
import logging
import os
import statistics
import time
from dataclasses import asdict, dataclass

import numpy as np

from .ann import INDEX_TYPES, LSHBinarizer, SyntheticSpec, generate_synthetic, recall_vs_baseline
from .codec_io import write_report
from .core import EvalReport
from .dataset_ops import replicate
from .exceptions import NondeterminismError, ValidationError

log = logging.getLogger(__name__)

GIB = 1 << 30
CSV_COLUMNS = ("tier", "index", "R@1", "R@100", "R@1000", "build_s", "search_s")
TIMING_SCOPE = "pure search, data resident in memory, file I/O excluded"


@dataclass(frozen=True)
class StorageCost:
    bytes: int
    gib: float


def storage_cost(n_samples: int, dim: int, dtype_bytes: int) -> StorageCost:
    """Exact byte count; GiB rounded to 2 decimals."""
    for name, v in (("n_samples", n_samples), ("dim", dim), ("dtype_bytes", dtype_bytes)):
        if int(v) <= 0:
            raise ValidationError(f"{name} must be positive")
    b = int(n_samples) * int(dim) * int(dtype_bytes)
    return StorageCost(bytes=b, gib=round(b / GIB, 2))


@dataclass(frozen=True)
class TimingStats:
    """Wall-clock statistics of repeated full passes over a query set.

    ``total_search_seconds`` is the median pass; the per-query figures are
    pass time divided by the number of queries, summarised over passes.
    """

    build_seconds: float
    total_search_seconds: float
    per_query_us_mean: float
    per_query_us_p50: float
    per_query_us_p99: float
    repeats: int
    warmups: int

    def __post_init__(self):
        if self.repeats < 1:
            raise ValidationError("repeats must be >= 1")
        for k, v in asdict(self).items():
            if v < 0:
                raise ValidationError(f"{k} must be non-negative")

    def as_dict(self) -> dict:
        return asdict(self)


def time_search(index, queries, k, repeats: int = 3, warmups: int = 1, build_seconds: float = 0.0,
                return_result: bool = False, **search_kw):
    """Time ``repeats`` passes of ``index.search`` after ``warmups`` untimed ones.

    Every pass must produce the same result digest; a mismatch raises
    :class:`NondeterminismError`.
    """
    repeats, warmups = int(repeats), int(warmups)
    if repeats < 1:
        raise ValidationError("repeats must be >= 1")
    if warmups < 0:
        raise ValidationError("warmups must be >= 0")
    digest = None
    result = None

    def check(r):
        nonlocal digest
        d = r.digest()
        if digest is None:
            digest = d
        elif d != digest:
            raise NondeterminismError(f"result digest changed across passes: {digest} vs {d}")

    for _ in range(warmups):
        check(index.search(queries, k, **search_kw))
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = index.search(queries, k, **search_kw)
        samples.append(time.perf_counter() - t0)
        check(result)
    nq = max(len(queries), 1)
    per_q = np.asarray(samples) / nq * 1e6
    stats = TimingStats(
        build_seconds=float(build_seconds),
        total_search_seconds=float(statistics.median(samples)),
        per_query_us_mean=float(per_q.mean()),
        per_query_us_p50=float(np.percentile(per_q, 50)),
        per_query_us_p99=float(np.percentile(per_q, 99)),
        repeats=repeats,
        warmups=warmups,
    )
    return (stats, result) if return_result else stats


# ---------------------------------------------------------------------------
# scale series


def _index_name(cfg: dict) -> str:
    return str(cfg.get("name") or cfg["type"])


def _index_params(cfg: dict) -> dict:
    return {k: v for k, v in cfg.items() if k not in ("type", "name", "bits")}


def estimate_bytes(cfg: dict, n_base: int, n_query: int, dim: int, itemsize: int = 4) -> int:
    """Rough resident-memory need of one (tier, index) run, data included."""
    data = (n_base + n_query) * dim * itemsize
    kind = cfg["type"]
    if kind == "flat":
        qb = min(int(cfg.get("query_block", 2048)), n_query)
        cb = min(int(cfg.get("candidate_block", 16384)), n_base)
        return data + 2 * qb * cb * 8
    if kind in ("bflat", "bivf"):
        words = -(-int(cfg.get("bits", 64)) // 64)
        return data + (3 * n_base + n_query) * words * 8 + n_base * 16
    if kind == "hnsw":
        M = int(cfg.get("M", 32))
        M0 = int(cfg.get("M0") or 2 * M)
        return data + n_base * dim * 8 + n_base * (M0 + 2) * 8 + n_base * 24
    raise ValidationError(f"unknown index type {kind!r}")


def _tier_data(plan: dict, factor: int, base):
    if base is not None:
        b, q = base
        rb = replicate(b, factor=factor).data
        rq = replicate(q, factor=factor).data
        return rb, rq
    src = plan.get("source", {})
    spec = SyntheticSpec(
        n_base=int(src.get("n_base", 5000)) * factor,
        n_query=int(src.get("n_query", 1000)) * factor,
        dim=int(src.get("dim", 64)),
        n_clusters=int(src.get("n_clusters", 100)),
        cluster_std=float(src.get("cluster_std", 1.0)),
        noise_std=float(src.get("noise_std", 0.5)),
        seed=int(plan.get("seed", 0)),
    )
    return generate_synthetic(spec)


def _tier_shape(plan: dict, factor: int, base):
    if base is not None:
        b, q = base
        return b.n * factor, q.n * factor, b.dim
    src = plan.get("source", {})
    return int(src.get("n_base", 5000)) * factor, int(src.get("n_query", 1000)) * factor, int(src.get("dim", 64))


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


@dataclass
class BenchSeries:
    """The combined series report plus one report per (tier, index) run."""

    series: EvalReport
    runs: list


def check_plan(plan: dict) -> dict:
    if not isinstance(plan, dict):
        raise ValidationError("plan must be a JSON object")
    factors = [int(f) for f in plan.get("tiers", [1])]
    if not factors or min(factors) < 1:
        raise ValidationError("tier factors must be >= 1")
    if factors != sorted(factors):
        raise ValidationError("tier factors must be ascending")
    indexes = plan.get("indexes", [{"type": "flat"}])
    for cfg in indexes:
        if cfg.get("type") not in INDEX_TYPES:
            raise ValidationError(f"unknown index type {cfg.get('type')!r}")
    names = [_index_name(c) for c in indexes]
    if len(set(names)) != len(names):
        raise ValidationError("index names in a plan must be unique")
    ks = [int(k) for k in plan.get("ks", [1, 100, 1000])]
    return {**plan, "tiers": factors, "indexes": indexes, "ks": ks}


def scale_series(plan: dict, base=None, out_dir=None, budget_gib: float | None = None, threads=None) -> BenchSeries:
    """Run every configured index at every tier and collect recall and timing.

    ``plan`` keys: ``tiers`` (ascending replication factors), ``indexes``
    (list of ``{"type": ..., params...}``; binary types take ``bits`` for the
    LSH binariser), ``measure``, ``ks``, ``repeats``, ``warmups``, ``seed`` and,
    without ``base``, a synthetic ``source`` (sizes are per unit factor).
    ``base`` is an optional ``(base, queries)`` pair that is replicated instead.

    Recall is measured against an exhaustive flat search at the same tier.  A
    run whose estimated memory exceeds ``budget_gib`` is recorded as ``DNF``
    and the series continues.
    """
    plan = check_plan(plan)
    measure = plan.get("measure", "cosine")
    repeats, warmups = int(plan.get("repeats", 1)), int(plan.get("warmups", 0))
    seed = int(plan.get("seed", 0))
    budget = None if budget_gib is None else float(budget_gib) * GIB
    rows, timings, reports = [], {}, []
    base_cfg = {"type": "flat", "measure": measure}
    for factor in plan["tiers"]:
        n_base, n_query, dim = _tier_shape(plan, factor, base)
        tier = f"{n_query}/{n_base}"
        ks = [k for k in plan["ks"] if k <= n_base]
        depth = max(ks) if ks else 1
        fits = {}
        for cfg in plan["indexes"]:
            need = estimate_bytes(cfg, n_base, n_query, dim)
            fits[_index_name(cfg)] = (need, budget is None or need <= budget)
        baseline_fits = budget is None or estimate_bytes(base_cfg, n_base, n_query, dim) <= budget
        data = baseline = base_stats = None
        if baseline_fits and any(ok for _, ok in fits.values()):
            b, q = _tier_data(plan, factor, base)
            data = (b, q)
            flat = INDEX_TYPES["flat"](measure=measure, threads=threads)
            t0 = time.perf_counter()
            flat.fit(b)
            build = time.perf_counter() - t0
            base_stats, baseline = time_search(flat, q, depth, repeats, warmups, build, return_result=True)
        codes = {}
        for cfg in plan["indexes"]:
            name = _index_name(cfg)
            need, ok = fits[name]
            meta = {
                "tier": tier,
                "factor": factor,
                "n_base": n_base,
                "n_query": n_query,
                "dim": dim,
                "index": name,
                "index_type": cfg["type"],
                "params": _index_params(cfg),
                "measure": measure,
                "seed": seed,
                "estimated_bytes": need,
                "budget_bytes": None if budget is None else int(budget),
                "timing_scope": TIMING_SCOPE,
            }
            if not ok or data is None:
                meta["status"] = "DNF"
                log.info("tier %s index %s: DNF (needs %d bytes)", tier, name, need)
                rep = EvalReport(task="bench", metrics={}, meta=meta)
                row = {"tier": tier, "index": name, "status": "DNF", **{f"R@{k}": None for k in (1, 100, 1000)}}
                timings[f"{tier}|{name}"] = {"build_s": None, "search_s": None}
            else:
                b, q = data
                if cfg["type"] == "flat" and cfg.get("measure", measure) == measure and set(cfg) <= {"type", "name", "measure"}:
                    stats, res = base_stats, baseline
                else:
                    params = _index_params(cfg)
                    if cfg["type"] in ("bflat", "bivf"):
                        bits = int(cfg.get("bits", 64))
                        if bits not in codes:
                            lsh = LSHBinarizer(n_bits=bits, seed=seed).fit(b)
                            codes[bits] = (lsh.transform(b), lsh.transform(q))
                        xb, xq = codes[bits]
                        meta["binariser"] = {"method": "random-hyperplane LSH", "bits": bits, "seed": seed}
                        if cfg["type"] == "bivf":
                            params.setdefault("seed", seed)
                    else:
                        xb, xq = b, q
                        if cfg["type"] == "hnsw":
                            params.setdefault("seed", seed)
                            params.setdefault("measure", measure)
                            params["ef_search"] = max(int(params.get("ef_search", 128)), depth)
                    index = INDEX_TYPES[cfg["type"]](**params)
                    if "threads" in index.get_params():
                        index.set_params(threads=threads)
                    t0 = time.perf_counter()
                    index.fit(xb)
                    build = time.perf_counter() - t0
                    stats, res = time_search(index, xq, depth, repeats, warmups, build, return_result=True)
                rec = recall_vs_baseline(res, baseline, ks)
                meta["status"] = "ok"
                meta["result_digest"] = res.digest()
                meta["baseline_digest"] = baseline.digest()
                meta["recall_mode"] = "top1"
                rep = EvalReport(task="bench", metrics=rec.metrics, meta=meta, timing=stats.as_dict())
                row = {"tier": tier, "index": name, "status": "ok",
                       **{f"R@{k}": rec.metrics.get(f"R@{k}") for k in (1, 100, 1000)}}
                timings[f"{tier}|{name}"] = {"build_s": stats.build_seconds, "search_s": stats.total_search_seconds}
            rows.append(row)
            reports.append(rep)
        del data, baseline, codes
    series = EvalReport(
        task="bench-series",
        metrics={},
        meta={"plan": plan, "rows": rows, "budget_bytes": None if budget is None else int(budget),
              "timing_scope": TIMING_SCOPE},
        timing=timings,
    )
    result = BenchSeries(series, reports)
    if out_dir is not None:
        write_series(result, out_dir)
    return result


def write_series(result: BenchSeries, out_dir) -> None:
    """One report per run, ``series.json`` and the plot-ready ``series.csv``."""
    os.makedirs(out_dir, exist_ok=True)
    for rep in result.runs:
        write_report(rep, os.path.join(out_dir, f"tier{rep.meta['factor']}_{rep.meta['index']}.json"))
    write_report(result.series, os.path.join(out_dir, "series.json"))
    timings = result.series.timing
    with open(os.path.join(out_dir, "series.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for row in result.series.meta["rows"]:
            t = timings[f"{row['tier']}|{row['index']}"]
            if row["status"] == "DNF":
                w.writerow([row["tier"], row["index"]] + ["DNF"] * 5)
            else:
                w.writerow([row["tier"], row["index"], *(_fmt(row[c]) for c in ("R@1", "R@100", "R@1000")),
                            _fmt(t["build_s"]), _fmt(t["search_s"])])


__all__ = [
    "BenchSeries",
    "CSV_COLUMNS",
    "StorageCost",
    "TimingStats",
    "estimate_bytes",
    "scale_series",
    "storage_cost",
    "time_search",
    "write_series",
]
