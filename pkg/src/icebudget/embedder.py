"""Embedding stores and the deterministic fallback text encoder.

Real encoder output (e.g. from a sentence-transformer run offline) is
ingested from a binary or JSONL file; `hash_encode` provides a dependency-free
deterministic stand-in based on signed character n-gram feature hashing.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .corpus import Dataset
from .errors import ParseError, ValidationError

BINARY_MAGIC = b"ICEB"


class EmbeddingStore:
    """Immutable map from example id to a fixed-dimension float64 vector."""

    def __init__(self, dim: int):
        if dim < 1:
            raise ValidationError("embedding dimension must be positive")
        self.dim = dim
        self._vectors: dict[int, np.ndarray] = {}
        self._ids: list[int] = []
        self._matrix: np.ndarray | None = None

    @classmethod
    def from_dict(cls, dim: int, vectors: dict[int, np.ndarray]) -> "EmbeddingStore":
        store = cls(dim)
        for example_id in sorted(vectors):
            store._add(example_id, vectors[example_id])
        return store

    def _add(self, example_id: int, vector):
        vec = np.asarray(vector, dtype=np.float64)
        if vec.shape != (self.dim,):
            raise ValidationError(
                f"id {example_id}: vector has shape {vec.shape}, expected ({self.dim},)"
            )
        if not np.all(np.isfinite(vec)):
            raise ValidationError(f"id {example_id}: non-finite component")
        if example_id in self._vectors:
            raise ValidationError(f"duplicate embedding id {example_id}")
        self._vectors[example_id] = vec
        self._ids.append(example_id)
        self._matrix = None

    def __len__(self):
        return len(self._vectors)

    def __contains__(self, example_id):
        return example_id in self._vectors

    @property
    def ids(self) -> list[int]:
        return list(self._ids)

    def get(self, example_id: int) -> np.ndarray:
        vec = self._vectors.get(example_id)
        if vec is None:
            raise ValidationError(f"no embedding for id {example_id}")
        return vec

    def matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """(ids, vectors) as aligned arrays, sorted by id."""
        if self._matrix is None:
            ids = np.array(sorted(self._ids), dtype=np.int64)
            self._matrix = (ids, np.stack([self._vectors[i] for i in ids]))
        return self._matrix

    def subset(self, ids) -> "EmbeddingStore":
        return EmbeddingStore.from_dict(self.dim, {i: self.get(i) for i in ids})

    def check_bound(self, d: Dataset):
        """Require this store's id set to match the dataset's exactly."""
        if set(self._ids) != set(d.ids):
            raise ValidationError("embedding store is not bound to the dataset: "
                                  "id sets differ")


def load_embeddings(path) -> EmbeddingStore:
    """Load a store from the binary format (magic 'ICEB') or JSONL."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == BINARY_MAGIC:
        return _load_binary(path)
    return _load_jsonl(path)


def _load_binary(path) -> EmbeddingStore:
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16 or header[:4] != BINARY_MAGIC:
            raise ParseError(f"not a binary embedding file: {path}")
        _, dim, count = struct.unpack("<4sIQ", header)
        store = EmbeddingStore(dim)
        record = struct.Struct(f"<Q{dim}f")
        for _ in range(count):
            raw = fh.read(record.size)
            if len(raw) != record.size:
                raise ParseError(f"truncated embedding file: {path}")
            values = record.unpack(raw)
            store._add(values[0], np.array(values[1:], dtype=np.float64))
    return store


def _load_jsonl(path) -> EmbeddingStore:
    store = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line=lineno) from exc
            if "id" not in obj or "vector" not in obj:
                raise ParseError("record needs 'id' and 'vector'", line=lineno)
            vec = obj["vector"]
            if store is None:
                store = EmbeddingStore(len(vec))
            store._add(obj["id"], vec)
    if store is None:
        raise ValidationError(f"empty embedding file: {path}")
    return store


def save_embeddings(store: EmbeddingStore, path, format="binary"):
    if format == "binary":
        with open(path, "wb") as fh:
            fh.write(struct.pack("<4sIQ", BINARY_MAGIC, store.dim, len(store)))
            record = struct.Struct(f"<Q{store.dim}f")
            for example_id in sorted(store.ids):
                vec = store.get(example_id).astype(np.float32)
                fh.write(record.pack(example_id, *vec.tolist()))
    elif format == "jsonl":
        with open(path, "w", encoding="utf-8") as fh:
            for example_id in sorted(store.ids):
                fh.write(json.dumps({"id": example_id,
                                     "vector": store.get(example_id).tolist()}) + "\n")
    else:
        raise ValidationError(f"unknown embedding format: {format}")


def _stable_bucket(token: str, seed: int, dim: int) -> tuple[int, float]:
    digest = hashlib.blake2b(token.encode("utf-8"),
                             digest_size=8,
                             key=str(seed).encode("utf-8")).digest()
    value = int.from_bytes(digest, "little")
    sign = 1.0 if value & 1 else -1.0
    return (value >> 1) % dim, sign


def hash_encode(text: str, dim: int, seed: int = 0) -> np.ndarray:
    """Signed feature hashing of character 2- and 3-grams, L2-normalized.

    Pure function of (text, dim, seed); uses a keyed blake2b hash so results
    are stable across processes.
    """
    if dim < 2:
        raise ValidationError("hash encoder needs dim >= 2")
    if not text:
        raise ValidationError("cannot encode empty text")
    vec = np.zeros(dim, dtype=np.float64)
    for n in (2, 3):
        for i in range(max(len(text) - n + 1, 1)):
            bucket, sign = _stable_bucket(f"{n}:{text[i:i + n]}", seed, dim)
            vec[bucket] += sign
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        # all n-gram signs cancelled; fall back to a text-level bucket
        bucket, sign = _stable_bucket(f"t:{text}", seed, dim)
        vec[bucket] = sign
        norm = 1.0
    return vec / norm


class HashEncoder:
    """Configured wrapper around hash_encode with a fixed (dim, seed)."""

    def __init__(self, dim: int, seed: int = 0):
        if dim < 2:
            raise ValidationError("hash encoder needs dim >= 2")
        self.dim = dim
        self.seed = seed

    def __call__(self, text: str) -> np.ndarray:
        return hash_encode(text, self.dim, self.seed)


def encode_dataset(d: Dataset, encoder) -> EmbeddingStore:
    """One embedding per example id, computed with the given encoder."""
    vectors = {ex.id: encoder(ex.text) for ex in d.examples}
    return EmbeddingStore.from_dict(encoder.dim, vectors)
