"""Random-hyperplane binarisation of dense embeddings."""

from __future__ import annotations

import numba as nb
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .._rng import numpy_generator
from ..core import BinaryCodeSet
from ..exceptions import ValidationError
from .base import check_embeddings


@nb.njit(nogil=True, cache=True)
def _project_signs(X, H, out_bytes):
    """Bit j of row i is set iff dot(X[i], H[:, j]) >= 0.

    Each dot product accumulates over dimensions in index order, so a row's
    code does not depend on which other rows share the call.
    """
    d, n_bits = H.shape
    acc = np.empty(n_bits)
    for i in range(X.shape[0]):
        acc[:] = 0.0
        for t in range(d):
            x = np.float64(X[i, t])
            for j in range(n_bits):
                acc[j] += x * H[t, j]
        for j in range(n_bits):
            if acc[j] >= 0.0:
                out_bytes[i, j >> 3] |= np.uint8(1 << (j & 7))


class LSHBinarizer(TransformerMixin, BaseEstimator):
    """Map vectors to ``n_bits`` sign bits of projections on random unit hyperplanes.

    The expected normalised Hamming distance between two codes equals the
    angle between the inputs divided by pi.
    """

    def __init__(self, n_bits=64, seed=0, block=8192):
        self.n_bits = n_bits
        self.seed = seed
        self.block = block

    def fit(self, X, y=None):
        X = check_embeddings(X)
        if self.n_bits <= 0 or self.n_bits % 8:
            raise ValidationError(f"n_bits must be a positive multiple of 8, got {self.n_bits}")
        rng = numpy_generator(self.seed, "lsh-hyperplanes")
        H = rng.standard_normal((int(self.n_bits), X.dim))
        H /= np.linalg.norm(H, axis=1, keepdims=True)
        self.hyperplanes_ = H
        self.n_features_in_ = X.dim
        return self

    def transform(self, X) -> BinaryCodeSet:
        check_is_fitted(self, "hyperplanes_")
        X = check_embeddings(X)
        if X.dim != self.n_features_in_:
            raise ValidationError(f"dimension mismatch: fitted on {self.n_features_in_}, got {X.dim}")
        HT = np.ascontiguousarray(self.hyperplanes_.T)
        out = np.zeros((X.n, int(self.n_bits) // 8), dtype=np.uint8)
        for s in range(0, X.n, int(self.block)):
            e = min(s + int(self.block), X.n)
            _project_signs(np.ascontiguousarray(X.values[s:e]), HT, out[s:e])
        return BinaryCodeSet.from_bytes(out, ids=X.ids)


def binarise_lsh(data, bits=64, seed=0) -> BinaryCodeSet:
    return LSHBinarizer(n_bits=bits, seed=seed).fit_transform(data)
