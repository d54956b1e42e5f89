"""Exact top-k nearest-neighbor selection under L2 distance.

Ties are broken by ascending example id so transcripts are reproducible on
any platform. All distance comparisons happen in float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Dataset
from .embedder import EmbeddingStore
from .errors import ValidationError


@dataclass(frozen=True)
class RankedSet:
    """Ordered (example id, distance) pairs, ascending by (distance, id)."""

    entries: tuple[tuple[int, float], ...]

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def ids(self) -> list[int]:
        return [example_id for example_id, _ in self.entries]

    def id_set(self) -> set[int]:
        return {example_id for example_id, _ in self.entries}


def distance(a, b) -> float:
    """Euclidean distance between two equal-dimension vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def _rank(query: np.ndarray, ids: np.ndarray, matrix: np.ndarray, k: int) -> RankedSet:
    if len(ids) == 0 or k == 0:
        return RankedSet(())
    diffs = matrix - query
    dists = np.sqrt(np.einsum("ij,ij->i", diffs, diffs))
    k = min(k, len(ids))
    # lexsort's last key is primary: sort by distance, then id
    order = np.lexsort((ids, dists))[:k]
    return RankedSet(tuple((int(ids[i]), float(dists[i])) for i in order))


def top_k(e_q, k: int, d: Dataset, store: EmbeddingStore) -> RankedSet:
    """The k entries of `d` minimizing (distance to e_q, id)."""
    if k < 0:
        raise ValidationError("k must be nonnegative")
    store.check_bound(d)
    query = np.asarray(e_q, dtype=np.float64)
    if query.shape != (store.dim,):
        raise ValidationError(
            f"query has shape {query.shape}, store dim is {store.dim}"
        )
    ids, matrix = store.matrix()
    return _rank(query, ids, matrix, k)


def merge_rerank(e_q, k: int, candidates, store: EmbeddingStore) -> RankedSet:
    """Top-k over the deduplicated union of candidate id collections, with
    distances recomputed from the store."""
    union: set[int] = set()
    for cand in candidates:
        if isinstance(cand, RankedSet):
            union.update(cand.id_set())
        else:
            union.update(int(i) for i in cand)
    for example_id in union:
        if example_id not in store:
            raise ValidationError(f"candidate id {example_id} missing from store")
    if not union:
        return RankedSet(())
    query = np.asarray(e_q, dtype=np.float64)
    ids = np.array(sorted(union), dtype=np.int64)
    matrix = np.stack([store.get(int(i)) for i in ids])
    return _rank(query, ids, matrix, k)
