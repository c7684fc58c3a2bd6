from __future__ import annotations

import hashlib

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..core import BinaryCodeSet, EmbeddingSet, RankedRetrieval
from ..exceptions import ValidationError


def check_embeddings(X, name: str = "X") -> EmbeddingSet:
    if isinstance(X, BinaryCodeSet):
        raise ValidationError(f"{name}: expected dense embeddings, got binary codes")
    if not isinstance(X, EmbeddingSet):
        X = EmbeddingSet.from_array(np.asarray(X))
    return X


def check_codes(X, name: str = "X") -> BinaryCodeSet:
    if not isinstance(X, BinaryCodeSet):
        raise ValidationError(f"{name}: expected packed binary codes, got {type(X).__name__}")
    return X


def check_k(k, n: int) -> int:
    k = int(k)
    if k < 1 or k > n:
        raise ValidationError(f"k out of range: {k} (index holds {n})")
    return k


class SearchIndex(BaseEstimator):
    """Common surface: ``fit(data)`` then ``search(queries, k) -> RankedRetrieval``."""

    kind = "base"

    def _check_fitted(self):
        check_is_fitted(self, "ids_")

    def __len__(self) -> int:
        self._check_fitted()
        return int(self.ids_.shape[0])

    def _retrieval(self, query_ids, idx, scores) -> RankedRetrieval:
        return RankedRetrieval(query_ids, self.ids_, idx, scores)

    def state_arrays(self) -> dict:
        """Fitted arrays that fully determine search results."""
        raise NotImplementedError

    def digest(self) -> str:
        self._check_fitted()
        h = hashlib.sha256(self.kind.encode())
        for name, arr in sorted(self.state_arrays().items()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()
