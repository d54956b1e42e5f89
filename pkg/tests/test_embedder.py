import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from icebudget.corpus import Dataset, Example, LabelSpace
from icebudget.embedder import (EmbeddingStore, HashEncoder, encode_dataset,
                                hash_encode, load_embeddings, save_embeddings)
from icebudget.errors import ParseError, ValidationError


def random_store(n, dim, seed=0):
    rng = np.random.default_rng(seed)
    return EmbeddingStore.from_dict(dim, {i: rng.standard_normal(dim)
                                          for i in range(n)})


class TestEmbeddingStore:
    def test_basic_access(self):
        store = EmbeddingStore.from_dict(2, {3: [1.0, 2.0], 1: [0.0, 0.5]})
        assert len(store) == 2
        assert 3 in store and 7 not in store
        assert np.array_equal(store.get(3), [1.0, 2.0])

    def test_wrong_dimension_rejected(self):
        with pytest.raises(ValidationError):
            EmbeddingStore.from_dict(3, {0: [1.0, 2.0]})

    def test_non_finite_rejected(self):
        with pytest.raises(ValidationError):
            EmbeddingStore.from_dict(2, {0: [np.nan, 0.0]})

    def test_matrix_sorted_by_id(self):
        store = EmbeddingStore.from_dict(1, {5: [5.0], 2: [2.0], 9: [9.0]})
        ids, matrix = store.matrix()
        assert ids.tolist() == [2, 5, 9]
        assert matrix[:, 0].tolist() == [2.0, 5.0, 9.0]

    def test_check_bound_requires_exact_match(self):
        d = Dataset((Example(0, "a", 0), Example(1, "b", 0)),
                    LabelSpace.default(1))
        random_store(2, 3).check_bound(d)
        with pytest.raises(ValidationError):
            random_store(3, 3).check_bound(d)  # extra id
        with pytest.raises(ValidationError):
            random_store(1, 3).check_bound(d)  # missing id

    def test_subset(self):
        store = random_store(5, 2, seed=1)
        sub = store.subset([1, 3])
        assert sorted(sub.ids) == [1, 3]
        assert np.array_equal(sub.get(3), store.get(3))


class TestSerialization:
    def test_jsonl_roundtrip_exact(self, tmp_path):
        store = random_store(10, 4, seed=7)
        path = tmp_path / "emb.jsonl"
        save_embeddings(store, path, format="jsonl")
        loaded = load_embeddings(path)
        assert sorted(loaded.ids) == sorted(store.ids)
        for i in store.ids:
            assert np.array_equal(loaded.get(i), store.get(i))

    def test_binary_roundtrip_float32(self, tmp_path):
        store = random_store(10, 4, seed=7)
        path = tmp_path / "emb.bin"
        save_embeddings(store, path, format="binary")
        loaded = load_embeddings(path)
        assert loaded.dim == 4
        for i in store.ids:
            # binary format stores float32, so compare at that precision
            np.testing.assert_allclose(loaded.get(i), store.get(i),
                                       atol=1e-6, rtol=1e-6)

    def test_binary_detected_by_magic(self, tmp_path):
        store = random_store(3, 2)
        path = tmp_path / "emb"
        save_embeddings(store, path, format="binary")
        assert path.read_bytes()[:4] == b"ICEB"

    def test_truncated_binary_rejected(self, tmp_path):
        store = random_store(3, 2)
        path = tmp_path / "emb.bin"
        save_embeddings(store, path, format="binary")
        (tmp_path / "cut.bin").write_bytes(path.read_bytes()[:-4])
        with pytest.raises(ParseError):
            load_embeddings(tmp_path / "cut.bin")

    def test_empty_jsonl_rejected(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        with pytest.raises(ValidationError):
            load_embeddings(path)


class TestHashEncode:
    def test_unit_norm(self):
        vec = hash_encode("hello world", 16)
        assert np.isclose(np.linalg.norm(vec), 1.0)

    @settings(deadline=None, max_examples=50)
    @given(text=st.text(min_size=1, max_size=40), dim=st.integers(2, 64),
           seed=st.integers(0, 1000))
    def test_pure_function(self, text, dim, seed):
        a = hash_encode(text, dim, seed)
        b = hash_encode(text, dim, seed)
        assert np.array_equal(a, b)
        assert np.isclose(np.linalg.norm(a), 1.0)

    def test_seed_changes_encoding(self):
        a = hash_encode("some sentence", 32, seed=0)
        b = hash_encode("some sentence", 32, seed=1)
        assert not np.array_equal(a, b)

    def test_similar_texts_closer_than_dissimilar(self):
        base = hash_encode("the quick brown fox jumps", 64)
        near = hash_encode("the quick brown fox jumped", 64)
        far = hash_encode("zzzz qqqq xxxx wwww", 64)
        assert np.linalg.norm(base - near) < np.linalg.norm(base - far)

    def test_empty_text_rejected(self):
        with pytest.raises(ValidationError):
            hash_encode("", 8)

    def test_min_dim(self):
        with pytest.raises(ValidationError):
            hash_encode("x", 1)

    def test_single_char(self):
        # shorter than any n-gram window; must still produce a unit vector
        vec = hash_encode("a", 8)
        assert np.isclose(np.linalg.norm(vec), 1.0)


class TestEncodeDataset:
    def test_one_vector_per_example(self):
        d = Dataset((Example(0, "alpha", 0), Example(1, "beta", 1)),
                    LabelSpace.default(2))
        store = encode_dataset(d, HashEncoder(16, seed=3))
        assert sorted(store.ids) == [0, 1]
        assert np.array_equal(store.get(0), hash_encode("alpha", 16, 3))
