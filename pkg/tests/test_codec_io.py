import json
import logging
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fico.codec_io import (
    dumps_report,
    file_digest,
    format_real,
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
    write_ids,
    write_labels,
    write_report,
    write_sim,
    write_split,
    write_vectors,
)
from fico.core import BinaryCodeSet, EmbeddingSet, EvalReport, InstanceGroups, LabelMatrix, SimilarityMatrix, Split
from fico.exceptions import FormatError


def f32(x):
    return struct.pack("<f", x)


def test_read_identity_vectors(tmp_path):
    p = tmp_path / "a.fvecs"
    p.write_bytes(struct.pack("<i", 2) + f32(1.0) + f32(0.0) + struct.pack("<i", 2) + f32(0.0) + f32(1.0))
    es = read_vectors(p)
    assert np.array_equal(es.values, np.eye(2, dtype=np.float32))
    assert list(es.ids) == [0, 1]


def test_inconsistent_dim(tmp_path):
    p = tmp_path / "a.fvecs"
    p.write_bytes(struct.pack("<i", 2) + f32(1.0) + f32(0.0) + struct.pack("<i", 3) + f32(0.0) + f32(1.0) + f32(2.0))
    with pytest.raises(FormatError, match="inconsistent dim at record 1"):
        read_vectors(p)


def test_inconsistent_dim_same_size(tmp_path):
    # record 1 declares d=3 but the file size still divides evenly
    p = tmp_path / "a.fvecs"
    p.write_bytes(struct.pack("<i", 1) + f32(1.0) + struct.pack("<i", 3) + f32(0.0))
    with pytest.raises(FormatError, match="inconsistent dim at record 1"):
        read_vectors(p)


def test_truncated_record(tmp_path):
    p = tmp_path / "a.fvecs"
    p.write_bytes(struct.pack("<i", 2) + f32(1.0) + f32(0.0) + struct.pack("<i", 2) + f32(0.0))
    with pytest.raises(FormatError, match="truncated record 1"):
        read_vectors(p)


def test_nonfinite_rejected(tmp_path):
    p = tmp_path / "a.fvecs"
    p.write_bytes(struct.pack("<i", 1) + f32(float("nan")))
    with pytest.raises(FormatError, match="non-finite value, id=0"):
        read_vectors(p)


def test_nonpositive_dim(tmp_path):
    p = tmp_path / "a.fvecs"
    p.write_bytes(struct.pack("<i", 0))
    with pytest.raises(FormatError, match="non-positive dim"):
        read_vectors(p)


def test_empty_file_warns(tmp_path, caplog):
    p = tmp_path / "e.fvecs"
    write_vectors(EmbeddingSet.from_array(np.zeros((0, 3), np.float32)), p)
    assert p.stat().st_size == 0
    with caplog.at_level(logging.WARNING):
        es = read_vectors(p)
    assert es.n == 0
    assert "empty" in caplog.text


def test_single_vector_layout(tmp_path):
    p = tmp_path / "one.fvecs"
    write_vectors(EmbeddingSet.from_array(np.array([[2.5]], np.float32)), p)
    assert p.read_bytes() == bytes([1, 0, 0, 0]) + f32(2.5)


def test_dvecs_size_arithmetic(tmp_path):
    # same formula as the 1M x 2048 float64 case, at a size that fits a test
    n, d = 1000, 2048
    p = tmp_path / "x.dvecs"
    write_vectors(EmbeddingSet.from_array(np.zeros((n, d), np.float64)), p)
    assert p.stat().st_size == n * (4 + d * 8)


@given(st.integers(1, 20), st.integers(1, 9), st.sampled_from(["fvecs", "dvecs"]), st.integers(0, 2**32 - 1))
def test_vectors_round_trip(tmp_path_factory, n, d, fmt, seed):
    dt = np.float32 if fmt == "fvecs" else np.float64
    vals = np.random.default_rng(seed).standard_normal((n, d)).astype(dt)
    p = tmp_path_factory.mktemp("v") / f"x.{fmt}"
    write_vectors(EmbeddingSet.from_array(vals), p)
    back = read_vectors(p)
    assert back.values.dtype == dt
    assert back.values.tobytes() == vals.tobytes()
    mm = read_vectors(p, mmap=True)
    assert np.array_equal(mm.values, vals)


def test_sidecar_ids(tmp_path):
    p = tmp_path / "x.fvecs"
    write_vectors(EmbeddingSet.from_array(np.ones((2, 2), np.float32)), p)
    write_ids([7, 3], tmp_path / "ids.txt")
    assert list(read_ids(tmp_path / "ids.txt")) == [7, 3]
    assert list(read_vectors(p, ids=tmp_path / "ids.txt").ids) == [7, 3]


def test_codes_layout(tmp_path):
    p = tmp_path / "c.bvecs"
    p.write_bytes(struct.pack("<i", 8) + bytes([0xFF] + [0] * 7))
    codes = read_codes(p, 64)
    assert int(codes.words[0, 0]) == 0xFF
    assert int(np.unpackbits(codes.to_bytes()).sum()) == 8


def test_zero_code(tmp_path):
    p = tmp_path / "c.bvecs"
    p.write_bytes(struct.pack("<i", 8) + bytes(8))
    assert int(read_codes(p, 64).words[0, 0]) == 0


def test_code_width_mismatch(tmp_path):
    p = tmp_path / "c.bvecs"
    p.write_bytes(struct.pack("<i", 4) + bytes(4))
    with pytest.raises(FormatError, match="code width mismatch"):
        read_codes(p, 64)


def test_code_truncated(tmp_path):
    p = tmp_path / "c.bvecs"
    p.write_bytes(struct.pack("<i", 8) + bytes(5))
    with pytest.raises(FormatError, match="truncated record"):
        read_codes(p, 64)


@given(st.integers(1, 30), st.sampled_from([8, 24, 64, 128]), st.integers(0, 2**32 - 1))
def test_codes_round_trip(tmp_path_factory, n, L, seed):
    bits = np.random.default_rng(seed).integers(0, 2, (n, L))
    codes = BinaryCodeSet.from_bits(bits)
    p = tmp_path_factory.mktemp("c") / "c.bvecs"
    write_codes(codes, p)
    back = read_codes(p, L)
    assert np.array_equal(back.words, codes.words)
    assert p.stat().st_size == n * (4 + L // 8)


def _lines(p, objs):
    p.write_text("".join(json.dumps(o) + "\n" for o in objs))


def test_labels_parse(tmp_path):
    p = tmp_path / "l.jsonl"
    _lines(p, [{"id": 0, "labels": [1, 3]}, {"id": 1, "labels": []}])
    lm = read_labels(p)
    assert lm.num_categories == 4 and len(lm) == 2
    assert lm.entries[0] == (1, 3) and lm.entries[1] == ()


def test_labels_duplicate_line_number(tmp_path):
    p = tmp_path / "l.jsonl"
    _lines(p, [{"id": i, "labels": [0]} for i in range(4)] + [{"id": 0, "labels": [1]}])
    with pytest.raises(FormatError, match="duplicate id 0 at line 5"):
        read_labels(p)


def test_labels_negative_and_malformed(tmp_path):
    p = tmp_path / "l.jsonl"
    _lines(p, [{"id": 0, "labels": [-1]}])
    with pytest.raises(FormatError, match="negative label"):
        read_labels(p)
    p.write_text('{"id": 0, "labels": [1]}\n{"id": 1, "labels": [\n')
    with pytest.raises(FormatError, match="malformed JSON at line 2"):
        read_labels(p)


def test_eighty_categories(tmp_path):
    rng = np.random.default_rng(0)
    rows = [{"id": i, "labels": sorted(set(rng.integers(0, 80, 3).tolist()) | {i % 80})} for i in range(5000)]
    p = tmp_path / "l.jsonl"
    _lines(p, rows)
    assert read_labels(p).num_categories == 80


def test_labels_round_trip(tmp_path):
    lm = LabelMatrix({3: (0, 2), 9: ()}, 3)
    write_labels(lm, tmp_path / "l.jsonl")
    back = read_labels(tmp_path / "l.jsonl", num_categories=3)
    assert back.entries == lm.entries


def test_groups_parse(tmp_path):
    p = tmp_path / "g.jsonl"
    _lines(p, [{"image_id": 0, "caption_ids": [0, 1, 2, 3, 4]}, {"image_id": 1, "caption_ids": [5, 6, 7, 8, 9]}])
    g = read_groups(p)
    assert all(len(c) == 5 for c in g.groups.values()) and len(g.inverse) == 10


def test_groups_minimal_and_errors(tmp_path):
    p = tmp_path / "g.jsonl"
    _lines(p, [{"image_id": 4, "caption_ids": [9]}])
    assert read_groups(p).inverse == {9: 4}
    _lines(p, [{"image_id": 0, "caption_ids": [1]}, {"image_id": 2, "caption_ids": [1]}])
    with pytest.raises(FormatError, match="caption 1 not a partition"):
        read_groups(p)
    _lines(p, [{"image_id": 0, "caption_ids": []}])
    with pytest.raises(FormatError, match="empty caption list"):
        read_groups(p)


def test_groups_round_trip(tmp_path):
    g = InstanceGroups({2: (5, 6), 1: (7,)})
    write_groups(g, tmp_path / "g.jsonl")
    assert read_groups(tmp_path / "g.jsonl").groups == g.groups


def test_sim_one_by_one(tmp_path):
    p = tmp_path / "s.ficosim"
    write_sim(SimilarityMatrix(np.array([3]), np.array([4]), np.array([[0.5]], np.float32), "x"), p)
    assert p.stat().st_size == 44
    back = read_sim(p)
    assert back.scores[0, 0] == 0.5 and back.query_ids[0] == 3 and back.candidate_ids[0] == 4


def test_sim_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    sim = SimilarityMatrix(rng.permutation(1000)[:100].astype(np.uint64), np.arange(500, dtype=np.uint64),
                           rng.standard_normal((100, 500)).astype(np.float32), "x")
    p = tmp_path / "s.ficosim"
    write_sim(sim, p)
    back = read_sim(p)
    assert back.scores.tobytes() == sim.scores.tobytes()
    assert np.array_equal(back.query_ids, sim.query_ids)


def test_sim_errors(tmp_path):
    p = tmp_path / "s.ficosim"
    p.write_bytes(b"NOTMAGIC" + bytes(16))
    with pytest.raises(FormatError, match="bad magic"):
        read_sim(p)
    p.write_bytes(b"FICOSIM1" + struct.pack("<QQ", 2, 2) + struct.pack("<3f", 1, 2, 3))
    with pytest.raises(FormatError, match="truncated payload"):
        read_sim(p)
    sim = SimilarityMatrix(np.array([0]), np.array([1]), np.array([[0.5]], np.float32), "x")
    write_sim(sim, p)
    p.write_bytes(p.read_bytes() + b"\0")
    with pytest.raises(FormatError, match="size mismatch"):
        read_sim(p)


def test_split_round_trip_and_errors(tmp_path):
    s = Split([1, 2], [3], [4])
    write_split(s, tmp_path / "s.json")
    assert read_split(tmp_path / "s.json") == s
    (tmp_path / "b.json").write_text('{"train": [1], "val": [1], "test": []}')
    with pytest.raises(FormatError):
        read_split(tmp_path / "b.json")
    (tmp_path / "c.json").write_text('{"train": [1]}')
    with pytest.raises(FormatError):
        read_split(tmp_path / "c.json")


def test_format_real():
    assert format_real(1 / 3) == "0.33333333333333331"
    assert format_real(1.0) == "1.0"
    assert format_real(0.0) == "0.0"
    with pytest.raises(ValueError):
        format_real(float("nan"))


def test_report_rendering(tmp_path):
    rep = EvalReport(task="instance", direction="i2t", metrics={"R@1": 1.0, "R@5": 1 / 3})
    text = dumps_report(rep)
    assert '"metrics":{"R@1":1.0,"R@5":0.33333333333333331}' in text
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    write_report(rep, p1)
    write_report(EvalReport(task="instance", direction="i2t", metrics={"R@5": 1 / 3, "R@1": 1.0}), p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert file_digest(p1) == file_digest(p2)
    back = read_report(p1)
    assert back.metrics == rep.metrics
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(FormatError):
        read_report(tmp_path / "bad.json")


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_format_real_round_trips(x):
    assert float(format_real(x)) == x
