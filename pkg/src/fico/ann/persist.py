"""Index files.

Layout: ``b"FICOIDX1"``, 8-byte ASCII index-type tag (space padded), uint64
length + canonical JSON parameter block, uint32 array count, then per array:
uint16 name length + name, uint16 dtype length + numpy dtype string, uint8
ndim, ndim x uint64 shape, raw little-endian bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..core import BinaryCodeSet, EmbeddingSet
from ..exceptions import FormatError
from .flat import BinaryFlatIndex, FlatIndex
from .hnsw import HNSWIndex
from .ivf import BinaryIVFIndex
from ..similarity import Measure

MAGIC = b"FICOIDX1"
_TYPES = {cls.kind: cls for cls in (FlatIndex, BinaryFlatIndex, BinaryIVFIndex, HNSWIndex)}

# fitted attributes persisted per index type (besides ids)
_STATE = {
    "flat": ("values", "sq_norms_"),
    "bflat": ("words", "order_", "sorted_words_"),
    "bivf": ("words", "order_", "sorted_words_", "centroids_", "list_members_", "list_offsets_"),
    "hnsw": ("values", "graph_x_", "levels_", "up_slot_", "nbr0_", "cnt0_", "nbr_up_", "cnt_up_", "sq_norms_"),
}


def _arrays(index) -> dict:
    out = {"ids": np.asarray(index.ids_)}
    for name in _STATE[index.kind]:
        if name == "values":
            out[name] = np.asarray(index.data_.values)
        elif name == "words":
            out[name] = np.asarray(index.sorted_words_[np.argsort(index.order_)])
        else:
            val = getattr(index, name)
            if val is not None:
                out[name] = np.asarray(val)
    return out


def save_index(index, path) -> None:
    index._check_fitted()
    params = index.get_params()
    params = {k: v for k, v in params.items() if k != "threads"}
    extra = {}
    if index.kind == "hnsw":
        extra = {"entry": int(index.entry_), "max_level": int(index.max_level_), "metric": int(index.metric_)}
    if index.kind in ("bflat", "bivf"):
        extra = {"code_bits": int(index.code_bits_)}
    header = json.dumps({"params": params, "state": extra}, sort_keys=True, separators=(",", ":")).encode()
    arrays = _arrays(index)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(index.kind.encode().ljust(8))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr)
            dt = arr.dtype.newbyteorder("<").str.encode()
            fh.write(struct.pack("<H", len(name)) + name.encode())
            fh.write(struct.pack("<H", len(dt)) + dt)
            fh.write(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.astype(dt.decode(), copy=False).tobytes())


def load_index(path):
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise FormatError("bad magic: not a FICOIDX1 file")
    kind = data[8:16].decode().strip()
    if kind not in _TYPES:
        raise FormatError(f"unknown index type {kind!r}")
    pos = 16
    try:
        (hlen,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        header = json.loads(data[pos : pos + hlen])
        pos += hlen
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        arrays = {}
        for _ in range(count):
            (ln,) = struct.unpack_from("<H", data, pos)
            name = data[pos + 2 : pos + 2 + ln].decode()
            pos += 2 + ln
            (ln,) = struct.unpack_from("<H", data, pos)
            dt = np.dtype(data[pos + 2 : pos + 2 + ln].decode())
            pos += 2 + ln
            (ndim,) = struct.unpack_from("<B", data, pos)
            shape = struct.unpack_from(f"<{ndim}Q", data, pos + 1)
            pos += 1 + 8 * ndim
            nbytes = int(np.prod(shape)) * dt.itemsize
            if pos + nbytes > len(data):
                raise FormatError("truncated payload")
            arrays[name] = np.frombuffer(data, dtype=dt, count=int(np.prod(shape)), offset=pos).reshape(shape).astype(dt.newbyteorder("="))
            pos += nbytes
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise FormatError(f"corrupt index file: {exc}") from None
    if pos != len(data):
        raise FormatError("trailing bytes after index payload")
    index = _TYPES[kind](**header["params"])
    state = header["state"]
    index.ids_ = arrays["ids"]
    if kind in ("flat", "hnsw"):
        index.data_ = EmbeddingSet(ids=arrays["ids"], values=arrays["values"])
        index.measure_ = Measure.parse(index.measure)
        index.sq_norms_ = arrays.get("sq_norms_")
    if kind in ("bflat", "bivf"):
        index.code_bits_ = state["code_bits"]
    for name in _STATE[kind]:
        if name not in ("values", "words", "sq_norms_"):
            setattr(index, name, arrays[name])
    if kind == "bivf":
        index.centroids_ = np.ascontiguousarray(index.centroids_)
    if kind == "hnsw":
        index.entry_ = state["entry"]
        index.max_level_ = state["max_level"]
        index.metric_ = state["metric"]
    return index


def load_data_for(index):
    """The stored payload as a domain object (codes or embeddings)."""
    if index.kind in ("bflat", "bivf"):
        words = index.sorted_words_[np.argsort(index.order_)]
        return BinaryCodeSet(ids=index.ids_, words=words, code_bits=index.code_bits_)
    return index.data_
