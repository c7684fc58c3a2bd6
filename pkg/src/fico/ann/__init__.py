"""Exhaustive and approximate nearest-neighbour search, binarisation and
synthetic benchmark data."""

from .flat import BinaryFlatIndex, FlatIndex, build_binary_flat, build_flat, search_binary_flat, search_flat
from .hnsw import HNSWIndex, build_hnsw, search_hnsw
from .ivf import BinaryIVFIndex, search_binary_ivf, train_binary_ivf
from .lsh import LSHBinarizer, binarise_lsh
from .persist import load_index, save_index
from .recall import recall_vs_baseline
from .synthetic import SyntheticSpec, generate_synthetic

INDEX_TYPES = {
    "flat": FlatIndex,
    "bflat": BinaryFlatIndex,
    "bivf": BinaryIVFIndex,
    "hnsw": HNSWIndex,
}

__all__ = [
    "BinaryFlatIndex",
    "BinaryIVFIndex",
    "FlatIndex",
    "HNSWIndex",
    "INDEX_TYPES",
    "LSHBinarizer",
    "SyntheticSpec",
    "binarise_lsh",
    "build_binary_flat",
    "build_flat",
    "build_hnsw",
    "generate_synthetic",
    "load_index",
    "recall_vs_baseline",
    "save_index",
    "search_binary_flat",
    "search_binary_ivf",
    "search_flat",
    "search_hnsw",
    "train_binary_ivf",
]
