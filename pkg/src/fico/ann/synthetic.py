"""Seeded clustered Gaussian data for index benchmarks."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass

import numpy as np

from .._rng import numpy_generator
from ..core import EmbeddingSet
from ..exceptions import ValidationError

_CHUNK = 32768


@dataclass(frozen=True)
class SyntheticSpec:
    """Shape and noise of a synthetic base/query pair.

    Base point ``i`` sits on centre ``i % n_clusters`` (every centre used,
    balanced); each query picks its centre uniformly at random.  Centres are
    drawn from N(0, cluster_std^2) per dimension and every point gets
    N(0, noise_std^2) noise.
    """

    n_base: int
    n_query: int
    dim: int
    n_clusters: int = 100
    cluster_std: float = 1.0
    noise_std: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("n_base", "n_query", "dim", "n_clusters"):
            if int(getattr(self, name)) <= 0:
                raise ValidationError(f"{name} must be positive")
        if self.cluster_std < 0 or self.noise_std < 0:
            raise ValidationError("standard deviations must be non-negative")

    def as_dict(self) -> dict:
        return asdict(self)


def _fill(out, centers, assign, noise_std, rng):
    for s in range(0, out.shape[0], _CHUNK):
        e = min(s + _CHUNK, out.shape[0])
        block = centers[assign[s:e]]
        if noise_std:
            block = block + rng.standard_normal(block.shape) * noise_std
        out[s:e] = block


def _alloc(n, d, dtype, mmap_dir, name):
    if mmap_dir is None:
        return np.empty((n, d), dtype=dtype)
    os.makedirs(mmap_dir, exist_ok=True)
    return np.lib.format.open_memmap(os.path.join(mmap_dir, f"{name}.npy"), mode="w+", dtype=dtype, shape=(n, d))


def generate_synthetic(spec: SyntheticSpec, dtype=np.float32, mmap_dir=None):
    """Return ``(base, queries)`` as :class:`EmbeddingSet` objects.

    Base IDs are ``0..n_base-1`` and query IDs ``0..n_query-1``.  With
    ``mmap_dir`` the payloads are written to ``.npy`` memmaps there, for tiers
    that do not fit in memory.
    """
    d = int(spec.dim)
    centers = numpy_generator(spec.seed, "centers").standard_normal((spec.n_clusters, d)) * spec.cluster_std
    base_assign = np.arange(spec.n_base) % spec.n_clusters
    query_assign = numpy_generator(spec.seed, "query-assign").integers(0, spec.n_clusters, size=spec.n_query)
    base = _alloc(spec.n_base, d, dtype, mmap_dir, "base")
    _fill(base, centers, base_assign, spec.noise_std, numpy_generator(spec.seed, "base-noise"))
    queries = _alloc(spec.n_query, d, dtype, mmap_dir, "queries")
    _fill(queries, centers, query_assign, spec.noise_std, numpy_generator(spec.seed, "query-noise"))
    if mmap_dir is not None:
        base.flush()
        queries.flush()
        base = np.load(os.path.join(mmap_dir, "base.npy"), mmap_mode="r")
        queries = np.load(os.path.join(mmap_dir, "queries.npy"), mmap_mode="r")
    return (
        EmbeddingSet(ids=np.arange(spec.n_base, dtype=np.uint64), values=base),
        EmbeddingSet(ids=np.arange(spec.n_query, dtype=np.uint64), values=queries),
    )
