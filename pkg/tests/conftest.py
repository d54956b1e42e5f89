"""Shared fixtures: small random retrieval worlds and a tiny experiment
config used across the module tests."""

import numpy as np
import pytest

from icebudget.config import config_from_dict
from icebudget.corpus import Dataset, Example, LabelSpace
from icebudget.embedder import EmbeddingStore


def make_world(n, dim, seed, num_classes=2):
    """Random labeled dataset + embedding store with ids 0..n-1."""
    rng = np.random.default_rng(seed)
    examples = tuple(
        Example(id=i, text=f"point {i}", label=int(rng.integers(num_classes)))
        for i in range(n))
    vectors = {i: rng.standard_normal(dim) for i in range(n)}
    dataset = Dataset(examples, LabelSpace.default(num_classes))
    store = EmbeddingStore.from_dict(dim, vectors)
    return dataset, store


def brute_force_topk(e_q, k, dataset, store):
    """Independent oracle: full sort by (distance, id) with python sorting."""
    scored = []
    for ex in dataset:
        vec = store.get(ex.id)
        dist = float(np.sqrt(np.sum((np.asarray(e_q) - vec) ** 2)))
        scored.append((dist, ex.id))
    scored.sort()
    return [i for _, i in scored[:k]]


@pytest.fixture
def small_world():
    return make_world(40, 4, seed=11)


@pytest.fixture
def tiny_config(tmp_path):
    """A config small enough for sub-second end-to-end runs."""
    return config_from_dict({
        "name": "tiny",
        "seed": 3,
        "num_seeds": 1,
        "k": 4,
        "delta": 1,
        "alpha": 0,
        "proxy_size": 30,
        "policies": ["uniform"],
        "partition": {"scheme": "noniid", "num_clients": 2,
                      "labels_per_client": 1},
        "synthetic": {"num_classes": 2, "per_class_train": 30,
                      "per_class_eval": 25, "dim": 4, "spread": 0.3},
        "embeddings": {"source": "synthetic", "dim": 4},
        "train": {"epochs": 5, "width": 8},
        "backend": {"type": "mock"},
        "output_dir": str(tmp_path / "out"),
    })
