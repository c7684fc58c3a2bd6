"""Readers and writers for every on-disk format fico consumes or produces.

Layouts (all little-endian):

``fvecs`` / ``dvecs``
    per vector: int32 ``d`` then ``d`` float32 (fvecs) or float64 (dvecs).
``bvecs-packed``
    per code: int32 ``b = L/8`` then ``b`` bytes; bit ``j`` is bit ``j % 8``
    of byte ``j // 8``.
``ficosim``
    ``b"FICOSIM1"``, uint64 rows, uint64 cols, rows*cols float32 scores
    (row-major), rows uint64 row IDs, cols uint64 column IDs.
``labels-jsonl`` / ``groups-jsonl`` / ``split-json`` / ``report-json``
    JSON, see the individual functions.

Readers reject malformed input with :class:`~fico.exceptions.FormatError`;
they never repair it.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    BinaryCodeSet,
    EmbeddingSet,
    EvalReport,
    InstanceGroups,
    LabelMatrix,
    SimilarityMatrix,
    Split,
    validate,
)
from .exceptions import FormatError

log = logging.getLogger(__name__)

SIM_MAGIC = b"FICOSIM1"
_VEC_DTYPES = {"fvecs": np.dtype("<f4"), "dvecs": np.dtype("<f8")}
FORMATS = (
    "fvecs",
    "dvecs",
    "bvecs-packed",
    "labels-jsonl",
    "groups-jsonl",
    "split-json",
    "ficosim",
    "report-json",
)


@dataclass(frozen=True)
class FileManifest:
    path: str
    format: str
    count: int
    dim: int | None = None


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _vec_format(path, expected_dtype) -> np.dtype:
    if expected_dtype is None:
        suffix = Path(path).suffix.lstrip(".")
        return _VEC_DTYPES.get(suffix, _VEC_DTYPES["fvecs"])
    if isinstance(expected_dtype, str) and expected_dtype in _VEC_DTYPES:
        return _VEC_DTYPES[expected_dtype]
    dt = np.dtype(expected_dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported vector dtype {dt}")
    return dt.newbyteorder("<")


def read_ids(path) -> np.ndarray:
    """Sidecar ID list: one non-negative integer per line."""
    with open(path) as fh:
        ids = [int(line) for line in fh if line.strip()]
    return np.asarray(ids, dtype=np.uint64)


def write_ids(ids, path) -> None:
    with open(path, "w") as fh:
        fh.writelines(f"{int(x)}\n" for x in np.asarray(ids).tolist())


def read_vectors(path, expected_dtype=None, ids=None, mmap: bool = False) -> EmbeddingSet:
    """Read an fvecs/dvecs file into an :class:`EmbeddingSet`.

    The element type comes from ``expected_dtype`` (``"fvecs"``, ``"dvecs"``
    or a numpy float dtype) or else from the file suffix.  IDs default to
    ``0..n-1``; ``ids`` may be an array or a path to a sidecar list.
    With ``mmap=True`` the payload is left on disk as a strided memmap.
    """
    dt = _vec_format(path, expected_dtype)
    size = os.path.getsize(path)
    if isinstance(ids, (str, os.PathLike)):
        ids = read_ids(ids)
    if size == 0:
        log.warning("%s is empty; returning an empty set", path)
        return EmbeddingSet(ids=np.zeros(0, np.uint64), values=np.zeros((0, 1), dtype=dt.newbyteorder("=")))
    if size < 4:
        raise FormatError(f"truncated record 0 in {path}")
    with open(path, "rb") as fh:
        d = int(np.frombuffer(fh.read(4), dtype="<i4")[0])
    if d <= 0:
        raise FormatError(f"non-positive dim {d} at record 0")
    rec = 4 + d * dt.itemsize
    n = size // rec
    raw = np.memmap(path, dtype=np.uint8, mode="r")
    if size % rec:
        # find the first structural fault to report it precisely
        _scan_records(raw, d, dt, size)
        raise FormatError(f"truncated record {n} in {path}")
    heads = np.ndarray((n,), dtype="<i4", buffer=raw, offset=0, strides=(rec,))
    wrong = np.nonzero(heads != d)[0]
    if wrong.size:
        raise FormatError(f"inconsistent dim at record {int(wrong[0])}")
    body = np.ndarray((n, d), dtype=dt, buffer=raw, offset=4, strides=(rec, dt.itemsize))
    if mmap:
        values = body
    else:
        values = np.array(body, dtype=dt.newbyteorder("="))
        del body, heads, raw
    if ids is None:
        ids = np.arange(n, dtype=np.uint64)
    es = EmbeddingSet(ids=ids, values=values)
    result = validate(es)
    if not result:
        raise FormatError("; ".join(result.violations))
    return es


def _scan_records(raw, d, dt, size) -> None:
    rec = 4 + d * dt.itemsize
    pos, i = 0, 0
    while pos + 4 <= size:
        di = int(np.frombuffer(raw[pos : pos + 4].tobytes(), dtype="<i4")[0])
        if di != d:
            raise FormatError(f"inconsistent dim at record {i}")
        pos += rec
        i += 1


def write_vectors(es: EmbeddingSet, path, dtype=None, chunk: int = 16384) -> None:
    """Write ``es`` in fvecs (float32) or dvecs (float64) layout.

    The element type defaults to the set's own dtype.
    """
    dt = np.dtype(dtype if dtype is not None else es.dtype).newbyteorder("<")
    n, d = es.values.shape
    rec = np.dtype([("d", "<i4"), ("v", dt, (d,))]) if n else None
    with open(path, "wb") as fh:
        for start in range(0, n, chunk):
            block = np.asarray(es.values[start : start + chunk])
            out = np.empty(block.shape[0], dtype=rec)
            out["d"] = d
            out["v"] = block
            fh.write(out.tobytes())


def read_codes(path, code_bits: int, ids=None) -> BinaryCodeSet:
    if code_bits <= 0 or code_bits % 8:
        raise FormatError(f"code_bits must be a positive multiple of 8, got {code_bits}")
    if isinstance(ids, (str, os.PathLike)):
        ids = read_ids(ids)
    nbytes = code_bits // 8
    data = Path(path).read_bytes()
    size = len(data)
    rec = 4 + nbytes
    if size >= 4:
        b0 = int(np.frombuffer(data[:4], dtype="<i4")[0])
        if b0 != nbytes:
            raise FormatError(f"code width mismatch at record 0: {b0 * 8} bits declared, {code_bits} expected")
    n = size // rec
    if size % rec:
        raise FormatError(f"truncated record {n} in {path}")
    arr = np.frombuffer(data, dtype=np.uint8).reshape(n, rec)
    heads = arr[:, :4].copy().view("<i4").reshape(-1)
    wrong = np.nonzero(heads != nbytes)[0]
    if wrong.size:
        raise FormatError(f"code width mismatch at record {int(wrong[0])}")
    return BinaryCodeSet.from_bytes(arr[:, 4:], ids=ids)


def write_codes(codes: BinaryCodeSet, path) -> None:
    nbytes = codes.code_bits // 8
    out = np.empty((codes.n, 4 + nbytes), dtype=np.uint8)
    out[:, :4] = np.array([nbytes], dtype="<i4").view(np.uint8)
    out[:, 4:] = codes.to_bytes()
    Path(path).write_bytes(out.tobytes())


def _jsonl(path):
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"malformed JSON at line {lineno}: {exc.msg}") from None
            if not isinstance(obj, dict):
                raise FormatError(f"malformed line {lineno}: expected an object")
            yield lineno, obj


def _int_field(obj, key, lineno):
    val = obj.get(key)
    if isinstance(val, bool) or not isinstance(val, int):
        raise FormatError(f"malformed line {lineno}: {key!r} must be an integer")
    return val


def _int_list(obj, key, lineno):
    val = obj.get(key)
    if not isinstance(val, list) or any(isinstance(x, bool) or not isinstance(x, int) for x in val):
        raise FormatError(f"malformed line {lineno}: {key!r} must be a list of integers")
    return val


def read_labels(path, num_categories: int | None = None) -> LabelMatrix:
    """JSON Lines ``{"id": int, "labels": [int, ...]}``.

    ``C`` is ``1 + max label`` unless ``num_categories`` overrides it.
    """
    entries: dict[int, list] = {}
    top = -1
    for lineno, obj in _jsonl(path):
        sid = _int_field(obj, "id", lineno)
        labels = _int_list(obj, "labels", lineno)
        if sid < 0:
            raise FormatError(f"negative id {sid} at line {lineno}")
        if sid in entries:
            raise FormatError(f"duplicate id {sid} at line {lineno}")
        for c in labels:
            if c < 0:
                raise FormatError(f"negative label {c} at line {lineno}")
        if labels:
            top = max(top, max(labels))
        entries[sid] = labels
    C = top + 1 if num_categories is None else int(num_categories)
    lm = LabelMatrix(entries, C)
    result = validate(lm)
    if not result:
        raise FormatError("; ".join(result.violations[:5]))
    return lm


def write_labels(labels: LabelMatrix, path) -> None:
    with open(path, "w") as fh:
        for sid, cats in labels.entries.items():
            fh.write(json.dumps({"id": sid, "labels": list(cats)}, separators=(",", ":")) + "\n")


def read_groups(path) -> InstanceGroups:
    """JSON Lines ``{"image_id": int, "caption_ids": [int, ...]}``."""
    groups: dict[int, list] = {}
    owner: dict[int, int] = {}
    for lineno, obj in _jsonl(path):
        image = _int_field(obj, "image_id", lineno)
        caps = _int_list(obj, "caption_ids", lineno)
        if image in groups:
            raise FormatError(f"duplicate image id {image} at line {lineno}")
        if not caps:
            raise FormatError(f"empty caption list for image {image} at line {lineno}")
        for cap in caps:
            if cap in owner:
                raise FormatError(f"caption {cap} not a partition: listed under images {owner[cap]} and {image}")
            owner[cap] = image
        groups[image] = caps
    return InstanceGroups(groups)


def write_groups(groups: InstanceGroups, path) -> None:
    with open(path, "w") as fh:
        for image, caps in groups.groups.items():
            fh.write(json.dumps({"image_id": image, "caption_ids": list(caps)}, separators=(",", ":")) + "\n")


def read_split(path) -> Split:
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"malformed split file: {exc.msg}") from None
    if not isinstance(obj, dict) or set(obj) != {"train", "val", "test"}:
        raise FormatError('split file must hold exactly "train", "val" and "test"')
    for key, val in obj.items():
        if not isinstance(val, list) or any(isinstance(x, bool) or not isinstance(x, int) for x in val):
            raise FormatError(f"split {key!r} must be a list of integers")
    split = Split(obj["train"], obj["val"], obj["test"])
    result = validate(split)
    if not result:
        raise FormatError("; ".join(result.violations))
    return split


def write_split(split: Split, path) -> None:
    Path(path).write_text(json.dumps(split.as_dict(), separators=(",", ":")) + "\n")


def write_sim(sim: SimilarityMatrix, path) -> None:
    rows, cols = sim.shape
    with open(path, "wb") as fh:
        fh.write(SIM_MAGIC)
        fh.write(np.array([rows, cols], dtype="<u8").tobytes())
        fh.write(np.ascontiguousarray(sim.scores, dtype="<f4").tobytes())
        fh.write(sim.query_ids.astype("<u8").tobytes())
        fh.write(sim.candidate_ids.astype("<u8").tobytes())


def read_sim(path, measure_tag: str = "file") -> SimilarityMatrix:
    data = Path(path).read_bytes()
    if len(data) < 24 or data[:8] != SIM_MAGIC:
        raise FormatError("bad magic: not a FICOSIM1 file")
    rows, cols = (int(x) for x in np.frombuffer(data, dtype="<u8", count=2, offset=8))
    need = 24 + rows * cols * 4 + (rows + cols) * 8
    if len(data) < need:
        raise FormatError(f"truncated payload: {len(data)} bytes, header implies {need}")
    if len(data) > need:
        raise FormatError(f"size mismatch: {len(data) - need} trailing bytes after payload")
    scores = np.frombuffer(data, dtype="<f4", count=rows * cols, offset=24).reshape(rows, cols)
    off = 24 + rows * cols * 4
    qids = np.frombuffer(data, dtype="<u8", count=rows, offset=off)
    cids = np.frombuffer(data, dtype="<u8", count=cols, offset=off + rows * 8)
    sim = SimilarityMatrix(qids.astype(np.uint64), cids.astype(np.uint64), scores.astype(np.float32), measure_tag)
    result = validate(sim)
    if not result:
        raise FormatError("; ".join(result.violations))
    return sim


def format_real(x: float) -> str:
    """Render a real with 17 significant digits; integral values keep a ``.0``."""
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"cannot serialize non-finite value {x}")
    s = "%.17g" % x
    if "." not in s and "e" not in s:
        s += ".0"
    return s


def _canonical(obj) -> str:
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_real(obj)
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=True)
    if isinstance(obj, dict):
        items = sorted((str(k), v) for k, v in obj.items())
        return "{" + ",".join(json.dumps(k) + ":" + _canonical(v) for k, v in items) + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ",".join(_canonical(v) for v in list(obj)) + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_report(report: EvalReport | dict, include_timing: bool = True) -> str:
    obj = report.as_dict(include_timing) if isinstance(report, EvalReport) else report
    return _canonical(obj) + "\n"


def write_report(report: EvalReport | dict, path) -> None:
    """Canonical JSON: sorted keys, compact separators, reals at 17 significant digits."""
    Path(path).write_text(dumps_report(report))


def read_report(path) -> EvalReport:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed report: {exc.msg}") from None
    if not isinstance(obj, dict) or "task" not in obj:
        raise FormatError('malformed report: expected an object with a "task" field')
    return EvalReport(
        task=obj["task"],
        direction=obj.get("direction", "n/a"),
        metrics=obj.get("metrics", {}),
        per_query=obj.get("per_query"),
        meta=obj.get("meta", {}),
        timing=obj.get("timing", {}),
    )
