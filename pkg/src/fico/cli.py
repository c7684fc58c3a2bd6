"""``fico`` command-line entry point.

Each subcommand parses flags, loads inputs, calls one library operation and
writes its output.  Exit codes: 0 success, 1 validation error or bad usage,
2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time

import numpy as np

from . import __version__
from .codec_io import (
    FORMATS,
    file_digest,
    read_codes,
    read_groups,
    read_ids,
    read_labels,
    read_report,
    read_sim,
    read_split,
    read_vectors,
    write_codes,
    write_groups,
    write_labels,
    write_report,
    write_sim,
    write_split,
    write_vectors,
)
from .core import EvalReport, validate
from .exceptions import FicoError, ValidationError

log = logging.getLogger("fico")

HELP_WIDTH = 100
INDEX_TYPES = ("flat", "bflat", "bivf", "hnsw")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with status 1 (argparse defaults to 2, which fico reserves for I/O)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _formatter(prog):
    return argparse.HelpFormatter(prog, width=HELP_WIDTH, max_help_position=36)


# ---------------------------------------------------------------------------
# helpers


def _strip_threads(argv):
    out, skip = [], False
    for tok in argv:
        if skip:
            skip = False
            continue
        if tok == "--threads":
            skip = True
            continue
        if tok.startswith("--threads="):
            continue
        out.append(tok)
    return out


class _Run:
    """Per-invocation context: argv for provenance and digests of every input read."""

    def __init__(self, argv, args):
        self.argv = _strip_threads(argv)
        self.args = args
        self.inputs = {}

    def track(self, flag, path):
        if path is not None:
            self.inputs[flag] = file_digest(path)
        return path

    def provenance(self) -> dict:
        return {
            "argv": list(self.argv),
            "seed": getattr(self.args, "seed", None),
            "inputs": dict(sorted(self.inputs.items())),
            "version": __version__,
        }

    def report(self, report: EvalReport, path) -> None:
        report.meta = {**report.meta, "provenance": self.provenance()}
        write_report(report, path)


def _ids(run, flag, path):
    return None if path is None else read_ids(run.track(flag, path))


def _load_vectors(run, flag, path, ids_flag=None, ids_path=None):
    ids = _ids(run, ids_flag, ids_path)
    return read_vectors(run.track(flag, path), ids=ids)


def _load_codes(run, flag, path, bits, ids_flag=None, ids_path=None):
    ids = _ids(run, ids_flag, ids_path)
    return read_codes(run.track(flag, path), bits, ids=ids)


# ---------------------------------------------------------------------------
# subcommands


def cmd_sim(run, a):
    from .similarity import Measure, pairwise, signed_view

    measure = Measure.parse(a.measure)
    if measure is Measure.HAMMING or a.codes_bits is not None:
        if a.codes_bits is None:
            raise ValidationError("--codes-bits is required for hamming")
        q = _load_codes(run, "--queries", a.queries, a.codes_bits, "--query-ids", a.query_ids)
        c = _load_codes(run, "--candidates", a.candidates, a.codes_bits, "--cand-ids", a.cand_ids)
        if measure is not Measure.HAMMING:
            q, c = signed_view(q), signed_view(c)
    else:
        q = _load_vectors(run, "--queries", a.queries, "--query-ids", a.query_ids)
        c = _load_vectors(run, "--candidates", a.candidates, "--cand-ids", a.cand_ids)
    write_sim(pairwise(q, c, measure, threads=a.threads), a.out)


def cmd_eval(run, a):
    from .metrics import eval_category, eval_instance, parse_ks

    sim = read_sim(run.track("--sim", a.sim))
    if a.task == "instance":
        groups = read_groups(run.track("--groups", a.groups))
        report = eval_instance(sim, groups, a.direction, parse_ks(a.k), per_query=a.per_query)
    else:
        ql = read_labels(run.track("--query-labels", a.query_labels), a.num_categories)
        cl = read_labels(run.track("--cand-labels", a.cand_labels), a.num_categories)
        report = eval_category(sim, ql, cl, ks=parse_ks(a.k), pr_curve=a.pr_curve,
                               ap_denominator=a.ap_denominator, per_query=a.per_query, threads=a.threads)
    run.report(report, a.out)


def cmd_split(run, a):
    from .dataset_ops import make_split

    ids = read_ids(run.track("--ids", a.ids))
    labels = None if a.labels is None else read_labels(run.track("--labels", a.labels))
    if a.scheme == "load":
        run.track("--split-file", a.split_file)
    split = make_split(ids.tolist(), a.scheme, a.test, a.val, a.seed, labels=labels, path=a.split_file)
    write_split(split, a.out)
    if a.report:
        meta = {"scheme": a.scheme, "sizes": {k: len(v) for k, v in split.as_dict().items()}}
        if a.scheme == "stratified":
            meta["note"] = "greedy per-category balancing (stand-in stratification objective)"
        run.report(EvalReport(task="split", meta=meta), a.report)


def cmd_synth(run, a):
    from .ann import SyntheticSpec, generate_synthetic

    spec = SyntheticSpec(n_base=a.n_base, n_query=a.n_query, dim=a.dim, n_clusters=a.clusters,
                         cluster_std=a.cluster_std, noise_std=a.noise, seed=a.seed)
    base, query = generate_synthetic(spec, dtype=np.dtype(a.dtype))
    write_vectors(base, a.out_base)
    write_vectors(query, a.out_query)


def cmd_binarise(run, a):
    from .ann import LSHBinarizer

    data = _load_vectors(run, "--in", a.input, "--ids", a.ids)
    codes = LSHBinarizer(n_bits=a.bits, seed=a.seed).fit_transform(data)
    write_codes(codes, a.out)


def _index_params(a) -> dict:
    if a.type == "flat":
        return {"measure": a.measure}
    if a.type == "bflat":
        return {}
    if a.type == "bivf":
        nprobe = min(32, a.nlist) if a.nprobe is None else a.nprobe
        return {"nlist": a.nlist, "nprobe": nprobe, "n_iter": a.iters, "seed": a.seed}
    return {"M": a.M, "M0": a.M0, "ef_construction": a.ef_construction, "ef_search": a.ef_search,
            "measure": a.measure, "seed": a.seed, "selection": a.selection}


def cmd_index(run, a):
    from .ann import INDEX_TYPES as TYPES
    from .ann import load_index, recall_vs_baseline, save_index

    if a.action == "build":
        if a.type is None:
            raise ValidationError("--type is required for index build")
        if a.type in ("bflat", "bivf"):
            if a.bits is None:
                raise ValidationError(f"--bits is required for {a.type}")
            data = _load_codes(run, "--data", a.data, a.bits, "--ids", a.ids)
        else:
            data = _load_vectors(run, "--data", a.data, "--ids", a.ids)
        index = TYPES[a.type](**_index_params(a), threads=a.threads)
        index.fit(data)
        save_index(index, a.out)
        return
    index = load_index(run.track("--index", a.index))
    index.set_params(threads=a.threads)
    if a.type is not None and a.type != index.kind:
        raise ValidationError(f"--type {a.type} does not match stored index type {index.kind}")
    if index.kind in ("bflat", "bivf"):
        queries = _load_codes(run, "--queries", a.queries, index.code_bits_, "--query-ids", a.query_ids)
    else:
        queries = _load_vectors(run, "--queries", a.queries, "--query-ids", a.query_ids)
    kw = {}
    if index.kind == "bivf" and a.nprobe_search is not None:
        kw["nprobe"] = a.nprobe_search
    if index.kind == "hnsw" and a.ef_search_search is not None:
        kw["ef_search"] = a.ef_search_search
    t0 = time.perf_counter()
    res = index.search(queries, a.k, **kw)
    elapsed = time.perf_counter() - t0
    ids = res.result_ids()
    per_query = {
        int(q): {"ids": [int(x) for x in ids[i]], "scores": [float(x) for x in res.scores[i]]}
        for i, q in enumerate(res.query_ids.tolist())
    }
    metrics = {}
    meta = {"index_type": index.kind, "params": {k: v for k, v in index.get_params().items() if k != "threads"},
            "k": int(a.k), "search_params": kw, "result_digest": res.digest()}
    if a.baseline_index:
        base = load_index(run.track("--baseline-index", a.baseline_index))
        base.set_params(threads=a.threads)
        bq = queries
        if base.kind in ("flat", "hnsw") and index.kind in ("bflat", "bivf"):
            if a.baseline_queries is None:
                raise ValidationError("--baseline-queries is required when the baseline is dense")
            bq = _load_vectors(run, "--baseline-queries", a.baseline_queries, "--query-ids", a.query_ids)
        ks = [int(x) for x in a.recall_k.split(",")]
        truth = base.search(bq, max(ks))
        metrics = recall_vs_baseline(res, truth, ks).metrics
        meta["baseline_digest"] = truth.digest()
    run.report(EvalReport(task="search", metrics=metrics, per_query=per_query, meta=meta,
                          timing={"search_seconds": elapsed}), a.out)


def cmd_bench(run, a):
    from .bench import scale_series, write_series

    with open(run.track("--plan", a.plan)) as fh:
        try:
            plan = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"malformed plan file: {exc.msg}") from None
    if a.seed is not None:
        plan = {**plan, "seed": a.seed}
    result = scale_series(plan, out_dir=None, budget_gib=a.budget_gib, threads=a.threads)
    prov = run.provenance()
    for rep in [*result.runs, result.series]:
        rep.meta = {**rep.meta, "provenance": prov}
    write_series(result, a.out_dir)


def cmd_validate(run, a):
    path = run.track("--in", a.input)
    fmt = a.format
    universe = None if a.universe is None else read_ids(run.track("--universe", a.universe))
    violations = []
    try:
        if fmt in ("fvecs", "dvecs"):
            obj = read_vectors(path, expected_dtype=fmt)
            violations = validate(obj, require_nonzero_norm=a.require_nonzero_norm).violations
        elif fmt == "bvecs-packed":
            if a.bits is None:
                raise ValidationError("--bits is required for bvecs-packed")
            violations = validate(read_codes(path, a.bits)).violations
        elif fmt == "labels-jsonl":
            violations = validate(read_labels(path, a.num_categories)).violations
        elif fmt == "groups-jsonl":
            violations = validate(read_groups(path)).violations
        elif fmt == "split-json":
            violations = validate(read_split(path), universe=universe).violations
        elif fmt == "ficosim":
            violations = validate(read_sim(path)).violations
        else:
            read_report(path)
    except ValidationError as exc:
        violations = [str(exc)]
    ok = not violations
    if a.out:
        run.report(EvalReport(task="validate", meta={"format": fmt, "ok": ok, "violations": violations}), a.out)
    for v in violations:
        print(f"{a.input}: {v}", file=sys.stderr)
    if ok:
        print(f"{a.input}: ok")
        return 0
    return 1


def cmd_replicate(run, a):
    from .dataset_ops import replicate
    from .codec_io import write_ids

    if a.bits is not None:
        data = _load_codes(run, "--in", a.input, a.bits, "--ids", a.ids)
    else:
        data = _load_vectors(run, "--in", a.input, "--ids", a.ids)
    labels = None if a.labels is None else read_labels(run.track("--labels", a.labels))
    groups = None if a.groups is None else read_groups(run.track("--groups", a.groups))
    if (a.labels is None) != (a.out_labels is None) or (a.groups is None) != (a.out_groups is None):
        raise ValidationError("--labels/--groups need matching --out-labels/--out-groups")
    rep = replicate(data, labels, groups, a.factor)
    if a.bits is not None:
        write_codes(rep.data, a.out)
    else:
        write_vectors(rep.data, a.out)
    write_ids(rep.data.ids, a.out_ids)
    if labels is not None:
        write_labels(rep.labels, a.out_labels)
    if groups is not None:
        write_groups(rep.groups, a.out_groups)


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--threads", type=int, default=None, metavar="N",
                        help="worker threads (0 = one per CPU; default: $FICO_THREADS or 0)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = _Parser(prog="fico", description="Retrieval evaluation, indexing and benchmarking toolkit.",
                formatter_class=_formatter)
    p.add_argument("--version", action="version", version=f"fico {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def add(name, help_, fn):
        sp = sub.add_parser(name, help=help_, description=help_, parents=[common], formatter_class=_formatter)
        sp.set_defaults(fn=fn)
        return sp

    s = add("sim", "compute a query x candidate similarity matrix", cmd_sim)
    s.add_argument("--queries", required=True, metavar="F", help="query vectors (fvecs/dvecs) or codes")
    s.add_argument("--candidates", required=True, metavar="F", help="candidate vectors or codes")
    s.add_argument("--measure", required=True, choices=("hamming", "ip", "cosine", "l2"))
    s.add_argument("--codes-bits", type=int, metavar="L", help="inputs are bvecs-packed codes of L bits")
    s.add_argument("--query-ids", metavar="F", help="sidecar ID list for the queries")
    s.add_argument("--cand-ids", metavar="F", help="sidecar ID list for the candidates")
    s.add_argument("--out", required=True, metavar="F", help="output .ficosim file")

    e = add("eval", "evaluate a similarity matrix", cmd_eval)
    e.add_argument("task", choices=("instance", "category"))
    e.add_argument("--sim", required=True, metavar="F", help="input .ficosim file")
    e.add_argument("--groups", metavar="F", help="groups-jsonl (instance)")
    e.add_argument("--direction", choices=("i2t", "t2i"), help="query modality (instance)")
    e.add_argument("--query-labels", metavar="F", help="labels-jsonl for queries (category)")
    e.add_argument("--cand-labels", metavar="F", help="labels-jsonl for candidates (category)")
    e.add_argument("--num-categories", type=int, metavar="C", help="override the category count")
    e.add_argument("--k", default=None, metavar="LIST", help="comma-separated cut-offs; N = all candidates")
    e.add_argument("--pr-curve", action="store_true", help="add 11-point interpolated precision (category)")
    e.add_argument("--ap-denominator", choices=("found", "min_k_relevant"), default="found",
                   help="AP@k normaliser (category)")
    e.add_argument("--per-query", action="store_true", help="include per-query values")
    e.add_argument("--out", required=True, metavar="F", help="output report-json")

    sp = add("split", "create or load a train/val/test split", cmd_split)
    sp.add_argument("--ids", required=True, metavar="F", help="image ID list")
    sp.add_argument("--scheme", choices=("karpathy", "stratified", "load"), default="karpathy")
    sp.add_argument("--test", type=int, default=0, metavar="N")
    sp.add_argument("--val", type=int, default=0, metavar="N")
    sp.add_argument("--seed", type=int, default=0, metavar="S")
    sp.add_argument("--labels", metavar="F", help="labels-jsonl (stratified)")
    sp.add_argument("--split-file", metavar="F", help="existing split-json (load)")
    sp.add_argument("--report", metavar="F", help="also write a report-json with provenance")
    sp.add_argument("--out", required=True, metavar="F", help="output split-json")

    sy = add("synth", "generate clustered synthetic vectors", cmd_synth)
    sy.add_argument("--n-base", type=int, required=True, metavar="N")
    sy.add_argument("--n-query", type=int, required=True, metavar="N")
    sy.add_argument("--dim", type=int, required=True, metavar="D")
    sy.add_argument("--clusters", type=int, default=100, metavar="C")
    sy.add_argument("--noise", type=float, default=0.5, metavar="X", help="per-dimension noise std")
    sy.add_argument("--cluster-std", type=float, default=1.0, metavar="X", help="per-dimension centre std")
    sy.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    sy.add_argument("--seed", type=int, default=0, metavar="S")
    sy.add_argument("--out-base", required=True, metavar="F")
    sy.add_argument("--out-query", required=True, metavar="F")

    b = add("binarise", "binarise vectors with random-hyperplane LSH", cmd_binarise)
    b.add_argument("--in", dest="input", required=True, metavar="F", help="fvecs/dvecs input")
    b.add_argument("--ids", metavar="F", help="sidecar ID list")
    b.add_argument("--bits", type=int, default=64, metavar="B")
    b.add_argument("--seed", type=int, default=0, metavar="S")
    b.add_argument("--out", required=True, metavar="F", help="bvecs-packed output")

    ix = add("index", "build or search a nearest-neighbour index", cmd_index)
    ix.add_argument("action", choices=("build", "search"))
    ix.add_argument("--type", choices=INDEX_TYPES)
    ix.add_argument("--data", metavar="F", help="vectors or codes to index (build)")
    ix.add_argument("--ids", metavar="F", help="sidecar ID list for --data")
    ix.add_argument("--bits", type=int, metavar="L", help="code length for bflat/bivf (build)")
    ix.add_argument("--measure", choices=("ip", "cosine", "l2"), default="ip")
    ix.add_argument("--M", type=int, default=32, help="HNSW links per node")
    ix.add_argument("--M0", type=int, default=None, help="HNSW layer-0 links (default 2*M)")
    ix.add_argument("--selection", choices=("simple", "heuristic"), default="simple",
                    help="HNSW neighbour selection rule")
    ix.add_argument("--ef-construction", type=int, default=200)
    ix.add_argument("--ef-search", type=int, default=128)
    ix.add_argument("--nlist", type=int, default=256, help="IVF lists")
    ix.add_argument("--nprobe", type=int, default=None, help="IVF lists probed (default min(32, nlist))")
    ix.add_argument("--iters", type=int, default=10, help="IVF training iterations")
    ix.add_argument("--seed", type=int, default=0, metavar="S")
    ix.add_argument("--index", metavar="F", help="index file (search)")
    ix.add_argument("--queries", metavar="F", help="query vectors or codes (search)")
    ix.add_argument("--query-ids", metavar="F", help="sidecar ID list for --queries")
    ix.add_argument("--k", type=int, default=10)
    ix.add_argument("--search-nprobe", dest="nprobe_search", type=int, help="override nprobe at search time")
    ix.add_argument("--search-ef", dest="ef_search_search", type=int, help="override ef_search at search time")
    ix.add_argument("--baseline-index", metavar="F", help="exhaustive index for recall (search)")
    ix.add_argument("--baseline-queries", metavar="F", help="dense queries for a dense baseline")
    ix.add_argument("--recall-k", default="1,10", metavar="LIST", help="recall cut-offs")
    ix.add_argument("--out", required=True, metavar="F", help="index file (build) or report-json (search)")

    be = add("bench", "run a scale-series benchmark plan", cmd_bench)
    be.add_argument("--plan", required=True, metavar="F", help="plan JSON")
    be.add_argument("--budget-gib", type=float, default=None, metavar="G", help="memory budget per run")
    be.add_argument("--seed", type=int, default=None, metavar="S", help="override the plan seed")
    be.add_argument("--out-dir", required=True, metavar="D")

    va = add("validate", "check a file against its format and invariants", cmd_validate)
    va.add_argument("--in", dest="input", required=True, metavar="F")
    va.add_argument("--format", required=True, choices=FORMATS)
    va.add_argument("--bits", type=int, metavar="L", help="code length (bvecs-packed)")
    va.add_argument("--num-categories", type=int, metavar="C")
    va.add_argument("--universe", metavar="F", help="ID list a split must cover")
    va.add_argument("--require-nonzero-norm", action="store_true", help="reject zero rows (cosine inputs)")
    va.add_argument("--out", metavar="F", help="write a report-json")

    r = add("replicate", "duplicate a dataset for scale series", cmd_replicate)
    r.add_argument("--in", dest="input", required=True, metavar="F", help="vectors, or codes with --bits")
    r.add_argument("--ids", metavar="F", help="sidecar ID list")
    r.add_argument("--bits", type=int, metavar="L")
    r.add_argument("--labels", metavar="F")
    r.add_argument("--groups", metavar="F")
    r.add_argument("--factor", type=int, required=True, metavar="N")
    r.add_argument("--out", required=True, metavar="F")
    r.add_argument("--out-ids", required=True, metavar="F")
    r.add_argument("--out-labels", metavar="F")
    r.add_argument("--out-groups", metavar="F")
    return p


def _check_required(a):
    need = {
        ("eval", "instance"): ("groups", "direction"),
        ("eval", "category"): ("query_labels", "cand_labels"),
        ("index", "build"): ("type", "data"),
        ("index", "search"): ("index", "queries"),
    }
    key = (a.command, getattr(a, "task", None) or getattr(a, "action", None))
    missing = [f"--{n.replace('_', '-')}" for n in need.get(key, ()) if getattr(a, n) is None]
    if missing:
        raise UsageError(f"{' '.join(key)} requires {', '.join(missing)}")
    if a.command == "eval" and a.k is None:
        a.k = "1,5,10" if a.task == "instance" else "10,100,N"


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _check_required(a)
        code = a.fn(_Run(argv, a), a)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"fico: error: {exc}", file=sys.stderr)
        return 1
    except (FicoError, ValueError) as exc:
        print(f"fico: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"fico: I/O error: {exc}", file=sys.stderr)
        return 2
    return int(code or 0)


if __name__ == "__main__":
    sys.exit(main())
