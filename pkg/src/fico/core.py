"""Domain types shared by every fico module.

Sample IDs are explicit unsigned 64-bit integers and never implicit row
positions.  All types are immutable after construction: numpy payloads are
flagged read-only and mappings are copied into tuples.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .exceptions import ValidationError

ID_DTYPE = np.dtype(np.uint64)
SCORE_DTYPE = np.dtype(np.float32)
FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))
MISSING = -1  # sentinel column index for results an index could not fill


def _as_ids(ids, n: int | None = None) -> np.ndarray:
    arr = np.asarray(ids)
    if arr.dtype.kind == "i" and arr.size and arr.min() < 0:
        raise ValidationError("sample IDs must be non-negative")
    if arr.dtype.kind not in "iu" and arr.size:
        raise ValidationError(f"sample IDs must be integers, got {arr.dtype}")
    arr = np.ascontiguousarray(arr, dtype=ID_DTYPE).reshape(-1)
    if n is not None and arr.shape[0] != n:
        raise ValidationError(f"expected {n} ids, got {arr.shape[0]}")
    return _readonly(arr)


def _readonly(arr: np.ndarray) -> np.ndarray:
    if arr.flags.writeable:
        arr.setflags(write=False)
    return arr


def _first_duplicate(ids: np.ndarray):
    if ids.size < 2:
        return None
    s = np.sort(ids)
    dup = np.nonzero(s[1:] == s[:-1])[0]
    return int(s[dup[0]]) if dup.size else None


@dataclass(frozen=True, eq=False)
class EmbeddingSet:
    """Dense real-valued vectors, one row per sample ID."""

    ids: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        # memmaps and strided views pass through uncopied
        values = np.asarray(self.values)
        if values.dtype.kind in "iub":
            values = values.astype(np.float64)
        if values.dtype not in FLOAT_DTYPES:
            raise ValidationError(f"unsupported dtype {values.dtype}")
        if values.ndim != 2:
            raise ValidationError("values must be an n x d matrix")
        if values.shape[0] and values.shape[1] <= 0:
            raise ValidationError("dim must be positive")
        object.__setattr__(self, "values", _readonly(values))
        object.__setattr__(self, "ids", _as_ids(self.ids, values.shape[0]))

    @classmethod
    def from_array(cls, values, ids=None) -> "EmbeddingSet":
        values = np.asarray(values)
        if ids is None:
            ids = np.arange(values.shape[0], dtype=ID_DTYPE)
        return cls(ids=ids, values=values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def dtype(self) -> np.dtype:
        return self.values.dtype

    def take(self, rows) -> "EmbeddingSet":
        rows = np.asarray(rows, dtype=np.int64)
        return type(self)(ids=self.ids[rows], values=np.asarray(self.values[rows]))

    def __len__(self) -> int:
        return self.n


@dataclass(frozen=True, eq=False)
class BinaryCodeSet:
    """Bit-packed hash codes.

    Bit ``j`` of a code lives in word ``j // 64`` at bit position ``j % 64``
    (least significant bit first).  Padding bits above ``code_bits`` must be
    zero; constructors do not repair them, :func:`validate` reports them.
    """

    ids: np.ndarray
    words: np.ndarray
    code_bits: int

    def __post_init__(self):
        L = int(self.code_bits)
        if L <= 0 or L % 8:
            raise ValidationError(f"code_bits must be a positive multiple of 8, got {L}")
        n_words = -(-L // 64)
        words = np.ascontiguousarray(np.asarray(self.words, dtype=np.uint64))
        if words.ndim == 1 and words.size == 0:
            words = words.reshape(0, n_words)
        if words.ndim != 2 or words.shape[1] != n_words:
            raise ValidationError(f"words must be n x {n_words} for {L}-bit codes")
        object.__setattr__(self, "code_bits", L)
        object.__setattr__(self, "words", _readonly(words))
        object.__setattr__(self, "ids", _as_ids(self.ids, words.shape[0]))

    @classmethod
    def from_bytes(cls, packed, ids=None) -> "BinaryCodeSet":
        """Build from an ``n x L/8`` uint8 array (bit ``j`` = bit ``j % 8`` of byte ``j // 8``)."""
        packed = np.ascontiguousarray(packed, dtype=np.uint8)
        n, nbytes = packed.shape
        n_words = -(-nbytes // 8)
        buf = np.zeros((n, n_words * 8), dtype=np.uint8)
        buf[:, :nbytes] = packed
        words = buf.view("<u8").astype(np.uint64)
        if ids is None:
            ids = np.arange(n, dtype=ID_DTYPE)
        return cls(ids=ids, words=words, code_bits=nbytes * 8)

    @classmethod
    def from_bits(cls, bits, ids=None) -> "BinaryCodeSet":
        """Build from an ``n x L`` array of 0/1 values in bit order."""
        bits = np.asarray(bits).astype(bool)
        packed = np.packbits(bits, axis=1, bitorder="little")
        return cls.from_bytes(packed, ids)

    def to_bytes(self) -> np.ndarray:
        raw = self.words.astype("<u8").view(np.uint8).reshape(self.n, -1)
        return raw[:, : self.code_bits // 8]

    def to_bits(self) -> np.ndarray:
        return np.unpackbits(self.to_bytes(), axis=1, bitorder="little").astype(bool)

    @property
    def n(self) -> int:
        return self.words.shape[0]

    @property
    def n_words(self) -> int:
        return self.words.shape[1]

    def take(self, rows) -> "BinaryCodeSet":
        rows = np.asarray(rows, dtype=np.int64)
        return BinaryCodeSet(ids=self.ids[rows], words=self.words[rows], code_bits=self.code_bits)

    def complement(self) -> "BinaryCodeSet":
        return BinaryCodeSet.from_bits(~self.to_bits(), self.ids)

    def __len__(self) -> int:
        return self.n


@dataclass(frozen=True, eq=False)
class SignedCodeView(EmbeddingSet):
    """Dense +1/-1 view of a :class:`BinaryCodeSet` (bit 1 -> +1.0, bit 0 -> -1.0)."""

    code_bits: int = 0


@dataclass(frozen=True)
class LabelMatrix:
    """Multi-label category assignment keyed by sample ID."""

    entries: Mapping[int, tuple]
    num_categories: int

    def __post_init__(self):
        entries = {int(k): tuple(sorted(set(int(c) for c in v))) for k, v in dict(self.entries).items()}
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "num_categories", int(self.num_categories))

    def __hash__(self):
        return id(self)

    def __contains__(self, sample_id) -> bool:
        return int(sample_id) in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def indicator(self, ids) -> np.ndarray:
        """Boolean ``len(ids) x C`` membership matrix; raises on unknown IDs."""
        ids = np.asarray(ids, dtype=ID_DTYPE)
        out = np.zeros((ids.shape[0], max(self.num_categories, 1)), dtype=bool)
        for row, sid in enumerate(ids.tolist()):
            try:
                cats = self.entries[sid]
            except KeyError:
                raise ValidationError(f"ID {sid} has no label entry") from None
            if cats:
                out[row, list(cats)] = True
        return out


@dataclass(frozen=True)
class InstanceGroups:
    """Image -> captions correspondence defining instance-level relevance."""

    groups: Mapping[int, tuple]
    inverse: Mapping[int, int] = field(default=None)

    def __post_init__(self):
        groups = {int(k): tuple(int(c) for c in v) for k, v in dict(self.groups).items()}
        inverse = {}
        for image, caps in groups.items():
            for cap in caps:
                inverse.setdefault(cap, image)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "inverse", inverse)

    def __hash__(self):
        return id(self)

    @property
    def image_ids(self) -> list:
        return list(self.groups)

    @property
    def caption_ids(self) -> list:
        return [c for caps in self.groups.values() for c in caps]


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    """Query x candidate scores; strictly larger means strictly more similar."""

    query_ids: np.ndarray
    candidate_ids: np.ndarray
    scores: np.ndarray
    measure_tag: str = ""

    def __post_init__(self):
        scores = np.ascontiguousarray(np.asarray(self.scores, dtype=SCORE_DTYPE))
        if scores.ndim != 2:
            raise ValidationError("scores must be a 2-D matrix")
        object.__setattr__(self, "scores", _readonly(scores))
        object.__setattr__(self, "query_ids", _as_ids(self.query_ids, scores.shape[0]))
        object.__setattr__(self, "candidate_ids", _as_ids(self.candidate_ids, scores.shape[1]))

    @property
    def shape(self) -> tuple:
        return self.scores.shape

    def transpose(self) -> "SimilarityMatrix":
        return SimilarityMatrix(self.candidate_ids, self.query_ids, self.scores.T, self.measure_tag)


@dataclass(frozen=True, eq=False)
class RankedRetrieval:
    """Per-query top-k candidate columns, best first.

    ``indices`` holds column positions into ``candidate_ids``; :data:`MISSING`
    marks slots an approximate index could not fill.
    """

    query_ids: np.ndarray
    candidate_ids: np.ndarray
    indices: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        indices = np.ascontiguousarray(np.asarray(self.indices, dtype=np.int64))
        scores = np.ascontiguousarray(np.asarray(self.scores, dtype=SCORE_DTYPE))
        if indices.ndim != 2 or indices.shape != scores.shape:
            raise ValidationError("indices and scores must be matching n_q x k matrices")
        object.__setattr__(self, "indices", _readonly(indices))
        object.__setattr__(self, "scores", _readonly(scores))
        object.__setattr__(self, "query_ids", _as_ids(self.query_ids, indices.shape[0]))
        object.__setattr__(self, "candidate_ids", _as_ids(self.candidate_ids))

    @property
    def k(self) -> int:
        return self.indices.shape[1]

    def result_ids(self) -> np.ndarray:
        """Candidate IDs per slot as int64, ``-1`` where missing."""
        out = np.full(self.indices.shape, -1, dtype=np.int64)
        ok = self.indices != MISSING
        out[ok] = self.candidate_ids[self.indices[ok]].astype(np.int64)
        return out

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.query_ids, self.result_ids(), self.scores):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def equals(self, other: "RankedRetrieval") -> bool:
        return (
            np.array_equal(self.query_ids, other.query_ids)
            and np.array_equal(self.result_ids(), other.result_ids())
            and np.array_equal(self.scores, other.scores)
        )


@dataclass(frozen=True)
class Split:
    train: tuple
    val: tuple
    test: tuple

    def __post_init__(self):
        for name in ("train", "val", "test"):
            object.__setattr__(self, name, tuple(int(x) for x in getattr(self, name)))

    def as_dict(self) -> dict:
        return {"train": list(self.train), "val": list(self.val), "test": list(self.test)}

    def partition_of(self) -> dict:
        out = {}
        for name in ("train", "val", "test"):
            for x in getattr(self, name):
                out[x] = name
        return out


RECALL_FAMILY = ("R@", "P@", "AP@", "mAP@", "P_interp@")


@dataclass
class EvalReport:
    """Metric results plus provenance.

    ``timing`` carries wall-clock measurements and is the only part excluded
    from the byte-determinism contract of serialized reports.
    """

    task: str
    direction: str = "n/a"
    metrics: dict = field(default_factory=dict)
    per_query: dict | None = None
    meta: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    def as_dict(self, include_timing: bool = True) -> dict[str, Any]:
        out = {
            "task": self.task,
            "direction": self.direction,
            "metrics": dict(self.metrics),
            "meta": dict(self.meta),
        }
        if self.per_query is not None:
            out["per_query"] = {str(k): v for k, v in self.per_query.items()}
        if include_timing:
            out["timing"] = dict(self.timing)
        return out


class ValidationResult:
    """Outcome of :func:`validate`: truthy when no invariant is violated."""

    def __init__(self, violations: Sequence[str] = ()):
        self.violations = list(violations)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def __repr__(self) -> str:
        return "ValidationResult(ok)" if self.ok else f"ValidationResult({self.violations!r})"

    def raise_if_invalid(self, what: str = "input") -> None:
        if self.violations:
            raise ValidationError(f"invalid {what}: " + "; ".join(self.violations))


def validate(obj, *, require_nonzero_norm: bool = False, universe=None) -> ValidationResult:
    """Check the documented invariants of a domain object.

    Violations are returned, never raised.  ``require_nonzero_norm`` adds the
    cosine precondition for embedding rows; ``universe`` is the ID set a
    :class:`Split` must cover.
    """
    v: list[str] = []
    if isinstance(obj, EmbeddingSet):
        dup = _first_duplicate(obj.ids)
        if dup is not None:
            v.append(f"duplicate id {dup}")
        if obj.n and obj.dim <= 0:
            v.append("dim must be positive")
        bad = _nonfinite_rows(obj.values)
        for row in bad[:10]:
            v.append(f"non-finite value, id={int(obj.ids[row])}")
        if require_nonzero_norm:
            norms = np.einsum("ij,ij->i", obj.values, obj.values, dtype=np.float64)
            for row in np.nonzero(norms == 0)[0][:10]:
                v.append(f"zero-norm row, id={int(obj.ids[row])}")
        if isinstance(obj, SignedCodeView):
            if obj.values.size and not np.all(np.abs(obj.values) == 1.0):
                v.append("signed view entries must be +1 or -1")
    elif isinstance(obj, BinaryCodeSet):
        dup = _first_duplicate(obj.ids)
        if dup is not None:
            v.append(f"duplicate id {dup}")
        rem = obj.code_bits % 64
        if rem and obj.n:
            pad_mask = np.uint64(~((1 << rem) - 1) & ((1 << 64) - 1))
            rows = np.nonzero(obj.words[:, -1] & pad_mask)[0]
            for row in rows[:10]:
                v.append(f"nonzero padding bits, id={int(obj.ids[row])}")
    elif isinstance(obj, LabelMatrix):
        for sid, cats in obj.entries.items():
            for c in cats:
                if c < 0 or c >= obj.num_categories:
                    v.append(f"category {c} out of range [0, {obj.num_categories}), id={sid}")
    elif isinstance(obj, InstanceGroups):
        seen: dict[int, int] = {}
        for image, caps in obj.groups.items():
            if not caps:
                v.append(f"image {image} has no captions")
            for cap in caps:
                if cap in seen:
                    v.append(f"caption {cap} not a partition")
                seen[cap] = image
    elif isinstance(obj, Split):
        parts = [set(obj.train), set(obj.val), set(obj.test)]
        names = ("train", "val", "test")
        for i in range(3):
            if len(parts[i]) != len(getattr(obj, names[i])):
                v.append(f"duplicate id within {names[i]}")
            for j in range(i + 1, 3):
                both = parts[i] & parts[j]
                if both:
                    v.append(f"id {min(both)} in both {names[i]} and {names[j]}")
        if universe is not None:
            universe = set(int(x) for x in universe)
            union = parts[0] | parts[1] | parts[2]
            if union != universe:
                v.append(f"split covers {len(union)} ids, universe has {len(universe)}")
    elif isinstance(obj, SimilarityMatrix):
        rows = _nonfinite_rows(obj.scores)
        for row in rows[:10]:
            v.append(f"non-finite score, query id={int(obj.query_ids[row])}")
    else:
        raise TypeError(f"cannot validate {type(obj).__name__}")
    return ValidationResult(v)


def _nonfinite_rows(values: np.ndarray, chunk: int = 65536) -> np.ndarray:
    bad = []
    for start in range(0, values.shape[0], chunk):
        block = np.asarray(values[start : start + chunk])
        rows = np.nonzero(~np.isfinite(block).all(axis=1))[0]
        bad.extend((rows + start).tolist())
    return np.asarray(bad, dtype=np.int64)
