"""Splits, caption alignment and dataset replication for scale series."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ._rng import SplitMix64, derive_seed, fisher_yates
from .codec_io import read_split
from .core import BinaryCodeSet, EmbeddingSet, InstanceGroups, LabelMatrix, Split, validate
from .exceptions import ValidationError

log = logging.getLogger(__name__)

# copy c of sample x gets ID x + c * ID_STRIDE; copy = ID // ID_STRIDE, original = ID % ID_STRIDE
ID_STRIDE = 1 << 40
SCHEMES = ("karpathy", "stratified", "load")


def _check_sizes(ids, n_test, n_val):
    n_test, n_val = int(n_test), int(n_val)
    if n_test < 0 or n_val < 0:
        raise ValidationError("n_test and n_val must be non-negative")
    if n_test + n_val > len(ids):
        raise ValidationError(f"insufficient IDs: {len(ids)} available, {n_test + n_val} requested for test+val")
    if len(set(ids)) != len(ids):
        raise ValidationError("image IDs must be unique")
    if n_test + n_val == len(ids):
        log.warning("split leaves the train partition empty")
    return n_test, n_val


def karpathy_split(image_ids, n_test: int, n_val: int, seed: int = 0) -> Split:
    """Seeded shuffle; first ``n_test`` IDs go to test, the next ``n_val`` to val, the rest to train."""
    ids = [int(x) for x in image_ids]
    n_test, n_val = _check_sizes(ids, n_test, n_val)
    order = fisher_yates(ids, seed)
    return Split(train=order[n_test + n_val :], val=order[n_test : n_test + n_val], test=order[:n_test])


def stratified_split(image_ids, labels: LabelMatrix, n_test: int, n_val: int, seed: int = 0) -> Split:
    """Greedy category-balancing split with exact partition sizes.

    Images are visited in seeded shuffle order.  Each goes to the partition
    (with room left) whose per-category counts lag furthest behind its share
    of the category totals, summed over the image's categories.  Ties fall to
    the partition with the largest remaining fraction of capacity, then to a
    seeded draw.
    """
    ids = [int(x) for x in image_ids]
    n_test, n_val = _check_sizes(ids, n_test, n_val)
    n = len(ids)
    cap = np.array([n_test, n_val, n - n_test - n_val], dtype=np.int64)
    share = cap / n if n else np.zeros(3)
    cats = {sid: labels.entries.get(sid, ()) for sid in ids}
    C = max(labels.num_categories, 1)
    totals = np.zeros(C)
    for c in cats.values():
        totals[list(c)] += 1
    counts = np.zeros((3, C))
    filled = np.zeros(3, dtype=np.int64)
    parts = ([], [], [])
    sm = SplitMix64(derive_seed(seed, "stratify"))
    for sid in fisher_yates(ids, seed):
        c = list(cats[sid])
        best, best_key = -1, None
        for p in range(3):
            if filled[p] >= cap[p]:
                continue
            deficit = float(np.sum(share[p] * totals[c] - counts[p, c])) if c else 0.0
            key = (deficit, (cap[p] - filled[p]) / cap[p], sm.next())
            if best_key is None or key > best_key:
                best, best_key = p, key
        parts[best].append(sid)
        filled[best] += 1
        if c:
            counts[best, c] += 1
    return Split(train=parts[2], val=parts[1], test=parts[0])


def load_split(path, image_ids=None) -> Split:
    """Read a split file verbatim; with ``image_ids`` it must cover exactly that set."""
    split = read_split(path)
    if image_ids is not None:
        validate(split, universe=image_ids).raise_if_invalid("split")
    return split


def make_split(image_ids, scheme: str = "karpathy", n_test: int = 0, n_val: int = 0, seed: int = 0,
               labels: LabelMatrix | None = None, path=None) -> Split:
    if scheme == "karpathy":
        return karpathy_split(image_ids, n_test, n_val, seed)
    if scheme == "stratified":
        if labels is None:
            raise ValidationError("stratified split needs labels")
        return stratified_split(image_ids, labels, n_test, n_val, seed)
    if scheme == "load":
        if path is None:
            raise ValidationError("scheme 'load' needs a split file")
        return load_split(path, image_ids)
    raise ValidationError(f"unknown split scheme {scheme!r}; expected one of {', '.join(SCHEMES)}")


def project_split(split: Split, groups: InstanceGroups) -> Split:
    """Caption-level split: every caption inherits its image's partition."""
    out = {}
    for name in ("train", "val", "test"):
        caps = []
        for image in getattr(split, name):
            try:
                caps.extend(groups.groups[image])
            except KeyError:
                raise ValidationError(f"image {image} in split {name!r} is unknown to the caption groups") from None
        out[name] = caps
    return Split(**out)


@dataclass(frozen=True)
class ReplicatedDataset:
    data: EmbeddingSet | BinaryCodeSet | None
    labels: LabelMatrix | None
    groups: InstanceGroups | None
    factor: int


def _offset_ids(ids, factor):
    ids = np.asarray(ids, dtype=np.uint64)
    if ids.size and int(ids.max()) >= ID_STRIDE:
        bad = int(ids[ids >= ID_STRIDE][0])
        raise ValidationError(f"ID overflow: id {bad} >= ID_STRIDE (2**40) cannot be replicated")
    offsets = np.arange(factor, dtype=np.uint64) * np.uint64(ID_STRIDE)
    return (offsets[:, None] + ids[None, :]).reshape(-1)


def _check_ids(ids):
    if ids and max(ids) >= ID_STRIDE:
        bad = next(x for x in ids if x >= ID_STRIDE)
        raise ValidationError(f"ID overflow: id {bad} >= ID_STRIDE (2**40) cannot be replicated")


def replicate(data=None, labels: LabelMatrix | None = None, groups: InstanceGroups | None = None,
              factor: int = 1) -> ReplicatedDataset:
    """Duplicate a dataset ``factor`` times, copy-major.

    Copy ``c`` of sample ``x`` becomes ``x + c * ID_STRIDE``; payload rows are
    byte-identical per copy.  Labels and caption groups are remapped the same
    way, so each image copy owns exactly its own caption copies.
    """
    factor = int(factor)
    if factor < 1:
        raise ValidationError(f"factor must be >= 1, got {factor}")
    out_data = None
    if data is not None:
        ids = _offset_ids(data.ids, factor)
        if isinstance(data, BinaryCodeSet):
            words = np.tile(np.asarray(data.words), (factor, 1))
            out_data = BinaryCodeSet(ids=ids, words=words, code_bits=data.code_bits)
        elif isinstance(data, EmbeddingSet):
            out_data = EmbeddingSet(ids=ids, values=np.tile(np.asarray(data.values), (factor, 1)))
        else:
            raise ValidationError(f"cannot replicate {type(data).__name__}")
    out_labels = None
    if labels is not None:
        _check_ids(list(labels.entries))
        entries = {}
        for c in range(factor):
            off = c * ID_STRIDE
            for sid, cats in labels.entries.items():
                entries[sid + off] = cats
        out_labels = LabelMatrix(entries, labels.num_categories)
    out_groups = None
    if groups is not None:
        _check_ids(list(groups.groups) + groups.caption_ids)
        g = {}
        for c in range(factor):
            off = c * ID_STRIDE
            for image, caps in groups.groups.items():
                g[image + off] = tuple(x + off for x in caps)
        out_groups = InstanceGroups(g)
    return ReplicatedDataset(out_data, out_labels, out_groups, factor)


def original_id(sample_id: int) -> tuple:
    """``(copy, original)`` for a replicated ID."""
    sample_id = int(sample_id)
    return sample_id // ID_STRIDE, sample_id % ID_STRIDE


__all__ = [
    "ID_STRIDE",
    "SCHEMES",
    "ReplicatedDataset",
    "karpathy_split",
    "load_split",
    "make_split",
    "original_id",
    "project_split",
    "replicate",
    "stratified_split",
]
