import math
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fico.ann import (
    BinaryFlatIndex,
    BinaryIVFIndex,
    FlatIndex,
    HNSWIndex,
    LSHBinarizer,
    SyntheticSpec,
    binarise_lsh,
    generate_synthetic,
    load_index,
    recall_vs_baseline,
    save_index,
)
from fico.core import BinaryCodeSet, EmbeddingSet, RankedRetrieval
from fico.exceptions import FormatError, ValidationError
from fico.metrics import rank_topk
from fico.similarity import pairwise

import oracles


def emb(values, ids=None):
    values = np.asarray(values, dtype=np.float32)
    ids = np.arange(len(values)) if ids is None else ids
    return EmbeddingSet(ids=np.asarray(ids, dtype=np.uint64), values=values)


def random_codes(rng, n, bits, ids=None):
    return BinaryCodeSet.from_bits(rng.random((n, bits)) < 0.5, ids)


@pytest.fixture(scope="module")
def clustered():
    spec = SyntheticSpec(n_base=3000, n_query=200, dim=24, n_clusters=30, noise_std=0.4, seed=5)
    return generate_synthetic(spec)


# ---- flat ------------------------------------------------------------------


@pytest.mark.parametrize("measure", ["inner_product", "cosine", "euclidean"])
def test_flat_equals_pairwise_rank(rng, measure):
    base = emb(rng.standard_normal((1500, 16)), rng.permutation(100_000)[:1500])
    q = emb(rng.standard_normal((40, 16)))
    got = FlatIndex(measure=measure, query_block=8, candidate_block=300).fit(base).search(q, 25)
    want = rank_topk(pairwise(q, base, measure), 25)
    assert np.array_equal(got.result_ids(), want.result_ids())
    assert np.array_equal(got.scores, want.scores)


def test_flat_ties_resolved_by_id():
    base = emb(np.ones((50, 4)), np.arange(50)[::-1])
    res = FlatIndex().fit(base).search(emb(np.ones((1, 4))), 5)
    assert res.result_ids()[0].tolist() == [0, 1, 2, 3, 4]


def test_flat_rejects_zero_norm_cosine():
    with pytest.raises(ValidationError, match="zero-norm"):
        FlatIndex(measure="cosine").fit(emb([[0, 0], [1, 0]]))


def test_flat_k_range(rng):
    idx = FlatIndex().fit(emb(rng.standard_normal((5, 3))))
    with pytest.raises(ValidationError, match="k out of range"):
        idx.search(emb(rng.standard_normal((1, 3))), 6)


def test_binary_flat_vs_oracle(rng):
    bits = 64
    base = random_codes(rng, 300, bits, rng.permutation(5000)[:300])
    q = random_codes(rng, 15, bits)
    res = BinaryFlatIndex(query_block=4).fit(base).search(q, 20)
    bb, qb = base.to_bits(), q.to_bits()
    for i in range(q.n):
        scores = [-oracles.hamming_bits(qb[i], bb[j]) for j in range(base.n)]
        order = oracles.ranking(scores, base.ids)[:20]
        assert res.result_ids()[i].tolist() == [int(base.ids[j]) for j in order]
        assert res.scores[i].tolist() == [scores[j] for j in order]


def test_binary_flat_code_length_mismatch(rng):
    idx = BinaryFlatIndex().fit(random_codes(rng, 10, 64))
    with pytest.raises(ValidationError, match="code length"):
        idx.search(random_codes(rng, 1, 128), 1)


# ---- IVF -------------------------------------------------------------------


def test_ivf_full_probe_equals_flat(rng):
    base = random_codes(rng, 800, 64, rng.permutation(10_000)[:800])
    q = random_codes(rng, 30, 64)
    flat = BinaryFlatIndex().fit(base).search(q, 50)
    ivf = BinaryIVFIndex(nlist=16, nprobe=16, seed=3).fit(base).search(q, 50)
    assert np.array_equal(ivf.result_ids(), flat.result_ids())
    assert np.array_equal(ivf.scores, flat.scores)


def _two_clusters(rng):
    bits = 128
    a = np.zeros(bits, bool)
    b = np.ones(bits, bool)
    rows = []
    for proto in (a, b):
        for _ in range(40):
            x = proto.copy()
            x[rng.choice(bits, 4, replace=False)] ^= True
            rows.append(x)
    return BinaryCodeSet.from_bits(np.array(rows)), bits


def test_ivf_two_clusters(rng):
    codes, bits = _two_clusters(rng)
    idx = BinaryIVFIndex(nlist=2, nprobe=1, seed=0).fit(codes)
    lists = sorted(sorted(int(x) for x in lst) for lst in idx.inverted_lists())
    assert lists == [list(range(40)), list(range(40, 80))]
    q = BinaryCodeSet.from_bits(np.zeros((1, bits), bool))
    res = idx.search(q, 40)
    assert set(res.result_ids()[0].tolist()) <= set(range(40))


def test_ivf_nlist_equals_n(rng):
    codes = random_codes(rng, 20, 64)
    idx = BinaryIVFIndex(nlist=20, nprobe=20).fit(codes)
    assert sorted(idx.list_sizes_.tolist()) == [1] * 20 or idx.list_sizes_.sum() == 20
    flat = BinaryFlatIndex().fit(codes).search(codes, 20)
    assert np.array_equal(idx.search(codes, 20).result_ids(), flat.result_ids())


def test_ivf_underfilled_slots_marked_missing(rng):
    codes, bits = _two_clusters(rng)
    idx = BinaryIVFIndex(nlist=2, nprobe=1).fit(codes)
    res = idx.search(BinaryCodeSet.from_bits(np.zeros((1, bits), bool)), 60)
    ids = res.result_ids()[0]
    assert (ids[:40] >= 0).all() and (ids[40:] == -1).all()
    assert np.isnan(res.scores[0, 40:]).all()


def test_ivf_seed_determinism(rng):
    codes = random_codes(rng, 500, 64)
    a = BinaryIVFIndex(nlist=10, nprobe=2, seed=4).fit(codes)
    b = BinaryIVFIndex(nlist=10, nprobe=2, seed=4).fit(codes)
    assert a.digest() == b.digest()
    assert a.search(codes, 5).digest() == b.search(codes, 5).digest()


def test_ivf_param_errors(rng):
    codes = random_codes(rng, 10, 64)
    with pytest.raises(ValidationError, match="nprobe out of range"):
        BinaryIVFIndex(nlist=4, nprobe=5).fit(codes)
    with pytest.raises(ValidationError, match="nlist"):
        BinaryIVFIndex(nlist=11, nprobe=1).fit(codes)
    idx = BinaryIVFIndex(nlist=4, nprobe=2).fit(codes)
    with pytest.raises(ValidationError, match="nprobe out of range"):
        idx.search(codes, 1, nprobe=0)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=15)
def test_ivf_recall_monotone_in_nprobe(seed):
    r = np.random.default_rng(seed)
    codes = random_codes(r, 200, 64)
    q = random_codes(r, 20, 64)
    idx = BinaryIVFIndex(nlist=8, nprobe=1, seed=seed).fit(codes)
    truth = BinaryFlatIndex().fit(codes).search(q, 10)
    prev = -1.0
    for nprobe in (1, 2, 4, 8):
        res = idx.search(q, 10, nprobe=nprobe)
        # a wider probe scans a superset of lists, so its best distance can only improve
        rec = recall_vs_baseline(res, truth, [10]).metrics["R@10"]
        assert rec >= prev
        prev = rec
    assert prev == 1.0


# ---- HNSW ------------------------------------------------------------------


@pytest.mark.parametrize("measure", ["inner_product", "cosine", "euclidean"])
@pytest.mark.parametrize("selection", ["simple", "heuristic"])
def test_hnsw_tiny_is_exact(rng, measure, selection):
    n = 30
    base = emb(rng.standard_normal((n, 8)), rng.permutation(1000)[:n])
    q = emb(rng.standard_normal((10, 8)))
    idx = HNSWIndex(M=n, ef_construction=n, ef_search=n, measure=measure, selection=selection).fit(base)
    got = idx.search(q, 10)
    want = FlatIndex(measure=measure).fit(base).search(q, 10)
    assert np.array_equal(got.result_ids(), want.result_ids())
    assert np.array_equal(got.scores, want.scores)


def _reachable(idx, n):
    seen = {idx.entry_}
    todo = deque([idx.entry_])
    while todo:
        u = todo.popleft()
        for v in idx.layer_neighbors(u, 0).tolist():
            if v not in seen:
                seen.add(v)
                todo.append(v)
    return seen


@pytest.mark.parametrize("selection", ["simple", "heuristic"])
def test_hnsw_connected(clustered, selection):
    base, _ = clustered
    idx = HNSWIndex(M=8, ef_construction=64, measure="cosine", selection=selection).fit(base)
    # undirected connectivity of layer 0
    adj = [set() for _ in range(base.n)]
    for u in range(base.n):
        for v in idx.layer_neighbors(u, 0).tolist():
            adj[u].add(v)
            adj[v].add(u)
    seen, todo = {0}, deque([0])
    while todo:
        u = todo.popleft()
        for v in adj[u] - seen:
            seen.add(v)
            todo.append(v)
    assert len(seen) == base.n
    assert len(_reachable(idx, base.n)) >= 0.99 * base.n


@pytest.mark.parametrize("selection", ["simple", "heuristic"])
def test_hnsw_self_query(clustered, selection):
    # 1000 seeded trials at the default parameters; smaller M under simple
    # selection drops below the bar (see the decisions ledger)
    base, _ = clustered
    rows = np.random.default_rng(0).choice(base.n, 1000, replace=False)
    idx = HNSWIndex(measure="euclidean", selection=selection).fit(base)
    res = idx.search(emb(np.asarray(base.values)[rows]), 1)
    assert np.mean(res.result_ids()[:, 0] == rows) >= 0.95


def test_hnsw_recall_against_flat(clustered):
    base, q = clustered
    idx = HNSWIndex(M=16, ef_construction=100, ef_search=100, measure="cosine").fit(base)
    truth = FlatIndex(measure="cosine").fit(base).search(q, 10)
    rep = recall_vs_baseline(idx.search(q, 10), truth, [1, 10])
    assert rep.metrics["R@10"] >= 0.9


def test_hnsw_layers_nested(clustered):
    base, _ = clustered
    idx = HNSWIndex(M=4, ef_construction=32).fit(base)
    assert idx.max_level_ >= 1
    for layer in range(1, idx.max_level_ + 1):
        upper = set(idx.layer_nodes(layer).tolist())
        assert upper <= set(idx.layer_nodes(layer - 1).tolist())
        for u in upper:
            nb = idx.layer_neighbors(u, layer)
            assert len(nb) <= 4 and set(nb.tolist()) <= upper
    assert all(len(idx.layer_neighbors(u, 0)) <= 8 for u in range(base.n))


def test_hnsw_determinism(clustered):
    base, q = clustered
    a = HNSWIndex(M=8, ef_construction=40, seed=9).fit(base)
    b = HNSWIndex(M=8, ef_construction=40, seed=9).fit(base)
    assert a.digest() == b.digest()
    assert a.search(q, 5, ef_search=20).digest() == b.search(q, 5, ef_search=20, ).digest()
    assert HNSWIndex(M=8, ef_construction=40, seed=10).fit(base).digest() != a.digest()


def test_hnsw_param_errors(rng):
    x = emb(rng.standard_normal((10, 3)))
    with pytest.raises(ValidationError):
        HNSWIndex(M=1).fit(x)
    with pytest.raises(ValidationError):
        HNSWIndex(selection="greedy").fit(x)
    idx = HNSWIndex(M=4).fit(x)
    with pytest.raises(ValidationError, match="ef_search"):
        idx.search(x, 5, ef_search=4)


def test_hnsw_single_point():
    idx = HNSWIndex().fit(emb([[1.0, 2.0]]))
    assert idx.search(emb([[0.0, 1.0]]), 1).result_ids().tolist() == [[0]]


# ---- LSH -------------------------------------------------------------------


def test_lsh_complement(rng):
    v = rng.standard_normal((20, 32))
    lsh = LSHBinarizer(n_bits=256, seed=1).fit(emb(v))
    a = lsh.transform(emb(v))
    b = lsh.transform(emb(-v))
    # exact sign flips except where a projection is exactly zero, which random data never hits
    assert np.array_equal(a.complement().to_bits(), b.to_bits())


def test_lsh_angle(rng):
    bits = 4096
    d = 32
    x = rng.standard_normal((30, d))
    y = rng.standard_normal((30, d))
    lsh = LSHBinarizer(n_bits=bits, seed=2).fit(emb(x))
    cx, cy = lsh.transform(emb(x)).to_bits(), lsh.transform(emb(y)).to_bits()
    for i in range(30):
        cos = x[i] @ y[i] / (np.linalg.norm(x[i]) * np.linalg.norm(y[i]))
        angle = math.acos(np.clip(cos, -1, 1)) / math.pi
        assert abs(np.mean(cx[i] != cy[i]) - angle) <= 0.05


def test_lsh_row_independence_and_determinism(rng):
    x = emb(rng.standard_normal((100, 16)))
    a = binarise_lsh(x, bits=64, seed=3)
    b = LSHBinarizer(n_bits=64, seed=3, block=7).fit(x).transform(x)
    assert np.array_equal(a.words, b.words)
    part = binarise_lsh(emb(np.asarray(x.values[:10])), bits=64, seed=3)
    assert np.array_equal(part.words, a.words[:10])


def test_lsh_errors(rng):
    with pytest.raises(ValidationError):
        LSHBinarizer(n_bits=12).fit(emb(rng.standard_normal((3, 4))))
    lsh = LSHBinarizer(n_bits=16).fit(emb(rng.standard_normal((3, 4))))
    with pytest.raises(ValidationError, match="dimension"):
        lsh.transform(emb(rng.standard_normal((3, 5))))


# ---- synthetic -------------------------------------------------------------


def test_synthetic_noise_free():
    spec = SyntheticSpec(n_base=40, n_query=10, dim=6, n_clusters=4, noise_std=0.0, seed=1)
    base, q = generate_synthetic(spec)
    assert len({tuple(r) for r in np.asarray(base.values).tolist()}) == 4
    for row in np.asarray(q.values):
        assert any(np.array_equal(row, b) for b in np.asarray(base.values[:4]))


def test_synthetic_determinism(tmp_path):
    spec = SyntheticSpec(n_base=500, n_query=50, dim=8, n_clusters=7, seed=11)
    a = generate_synthetic(spec)
    b = generate_synthetic(spec, mmap_dir=tmp_path)
    for x, y in zip(a, b):
        assert np.array_equal(np.asarray(x.values), np.asarray(y.values))
        assert np.array_equal(x.ids, y.ids)
    c = generate_synthetic(SyntheticSpec(n_base=500, n_query=50, dim=8, n_clusters=7, seed=12))
    assert not np.array_equal(np.asarray(a[0].values), np.asarray(c[0].values))


def test_synthetic_validation():
    with pytest.raises(ValidationError):
        SyntheticSpec(n_base=0, n_query=1, dim=1)
    with pytest.raises(ValidationError):
        SyntheticSpec(n_base=1, n_query=1, dim=1, noise_std=-1)


# ---- recall ----------------------------------------------------------------


def _rr(ids_rows, cand=10):
    ids_rows = np.asarray(ids_rows)
    return RankedRetrieval(np.arange(len(ids_rows)), np.arange(cand), ids_rows, np.zeros(ids_rows.shape))


def test_recall_self_is_one():
    a = _rr([[1, 2, 3], [4, 5, 6]])
    for mode in ("top1", "overlap"):
        assert set(recall_vs_baseline(a, a, [1, 3], mode=mode).metrics.values()) == {1.0}


def test_recall_never_is_zero():
    a = _rr([[1, 2, 3], [4, 5, 6]])
    b = _rr([[7, 8, 9], [7, 8, 9]])
    assert set(recall_vs_baseline(a, b, [1, 3]).metrics.values()) == {0.0}


def test_recall_top1_semantics():
    res = _rr([[2, 1, 3], [4, 5, 6]])
    base = _rr([[1, 2, 3], [9, 5, 6]])
    m = recall_vs_baseline(res, base, [1, 2, 3]).metrics
    assert m == {"R@1": 0.0, "R@2": 0.5, "R@3": 0.5}


def test_recall_depth_error():
    a = _rr([[1, 2]])
    with pytest.raises(ValidationError, match="depth insufficient"):
        recall_vs_baseline(a, a, [3])


# ---- persistence and scheduling ----------------------------------------------


def test_persist_round_trip(tmp_path, clustered, rng):
    base, q = clustered
    codes = binarise_lsh(base, bits=64)
    qc = binarise_lsh(q, bits=64)
    cases = [
        (FlatIndex(measure="cosine").fit(base), q),
        (HNSWIndex(M=8, ef_construction=40, measure="euclidean").fit(base), q),
        (BinaryFlatIndex().fit(codes), qc),
        (BinaryIVFIndex(nlist=8, nprobe=3).fit(codes), qc),
    ]
    for idx, queries in cases:
        path = tmp_path / f"{idx.kind}.idx"
        save_index(idx, path)
        again = load_index(path)
        assert type(again) is type(idx)
        assert again.digest() == idx.digest()
        assert again.search(queries, 7).digest() == idx.search(queries, 7).digest()


def test_persist_corrupt(tmp_path, rng):
    path = tmp_path / "x.idx"
    save_index(BinaryFlatIndex().fit(random_codes(rng, 5, 64)), path)
    raw = path.read_bytes()
    (tmp_path / "bad.idx").write_bytes(b"NOTFICO!" + raw[8:])
    with pytest.raises(FormatError, match="magic"):
        load_index(tmp_path / "bad.idx")
    (tmp_path / "short.idx").write_bytes(raw[:-3])
    with pytest.raises(FormatError):
        load_index(tmp_path / "short.idx")
    (tmp_path / "long.idx").write_bytes(raw + b"\0")
    with pytest.raises(FormatError, match="trailing"):
        load_index(tmp_path / "long.idx")


def test_thread_invariance(clustered):
    base, q = clustered
    codes, qc = binarise_lsh(base, bits=64), binarise_lsh(q, bits=64)
    for make, data, queries in (
        (lambda t: FlatIndex(measure="cosine", query_block=16, threads=t), base, q),
        (lambda t: HNSWIndex(M=8, ef_construction=40, query_block=16, threads=t), base, q),
        (lambda t: BinaryFlatIndex(query_block=16, threads=t), codes, qc),
        (lambda t: BinaryIVFIndex(nlist=8, nprobe=2, query_block=16, threads=t), codes, qc),
    ):
        digests = {make(t).fit(data).search(queries, 10).digest() for t in (1, 2, 4)}
        assert len(digests) == 1


def test_sklearn_params_roundtrip():
    from sklearn.base import clone

    idx = HNSWIndex(M=12, selection="heuristic")
    c = clone(idx)
    assert c.get_params() == idx.get_params()
