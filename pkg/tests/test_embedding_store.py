import numpy as np
import pytest

from embedding_store import (
    DimensionMismatchError,
    EmbeddingFormatError,
    EmbeddingStore,
    build_index,
    from_arrays,
    load_embeddings,
    lookup,
    nearest_exact,
    nearest_fast,
    recall_at_1,
)
from conftest import write_glove


# ----------------------------------------------------------------------------
# loading
# ----------------------------------------------------------------------------

def test_load_three_words(glove_file):
    store = load_embeddings(glove_file)
    assert len(store) == 3
    assert store.dimension == 3
    assert store.words == ("cat", "dog", "haiti")
    np.testing.assert_array_equal(store.vectors[1], [0.4, 0.5, 0.6])
    assert len(store.checksum) == 64


def test_load_is_reproducible(glove_file):
    a = load_embeddings(glove_file)
    b = load_embeddings(glove_file)
    assert a.checksum == b.checksum
    q = np.array([0.3, 0.3, 0.3])
    assert nearest_exact(a, q, 3) == nearest_exact(b, q, 3)


def test_dimension_mismatch_names_line(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("cat 0.1 0.2\ndog 0.1 0.2 0.3\n", encoding="utf-8")
    with pytest.raises(DimensionMismatchError, match="line 2"):
        load_embeddings(path)


def test_expected_dim_checked(glove_file):
    with pytest.raises(DimensionMismatchError, match="line 1"):
        load_embeddings(glove_file, expected_dim=4)


def test_duplicate_word_is_error(tmp_path):
    path = write_glove(tmp_path / "dup.txt", [("cat", [1.0]), ("dog", [2.0]), ("cat", [3.0])])
    with pytest.raises(EmbeddingFormatError, match="duplicate word 'cat'"):
        load_embeddings(path)


def test_non_numeric_coordinate(tmp_path):
    path = tmp_path / "nan.txt"
    path.write_text("cat 0.1 abc\n", encoding="utf-8")
    with pytest.raises(EmbeddingFormatError, match="line 1"):
        load_embeddings(path)


def test_non_finite_coordinate(tmp_path):
    path = tmp_path / "inf.txt"
    path.write_text("cat 0.1 0.2\ndog inf 0.2\n", encoding="utf-8")
    with pytest.raises(EmbeddingFormatError, match="line 2"):
        load_embeddings(path)


def test_empty_file(tmp_path):
    path = tmp_path / "empty.txt"
    path.write_text("\n\n", encoding="utf-8")
    with pytest.raises(EmbeddingFormatError, match="empty"):
        load_embeddings(path)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_embeddings(tmp_path / "nope.txt")


def test_store_is_read_only(line_store):
    with pytest.raises(ValueError):
        line_store.vectors[0, 0] = 3.0


def test_store_rejects_bad_shapes():
    with pytest.raises(EmbeddingFormatError):
        EmbeddingStore(["a", "b"], np.zeros((3, 2)))
    with pytest.raises(EmbeddingFormatError):
        EmbeddingStore([], np.zeros((0, 2)))


# ----------------------------------------------------------------------------
# lookup
# ----------------------------------------------------------------------------

def test_lookup_present_and_absent(glove_file):
    store = load_embeddings(glove_file)
    np.testing.assert_array_equal(lookup(store, "haiti"), [-1.0, 0.0, 2.5])
    assert lookup(store, "港") is None
    assert "cat" in store and "港" not in store


def test_lookup_rows_are_distinct(glove_file):
    store = load_embeddings(glove_file)
    assert len({store.index_of(w) for w in store.words}) == len(store)


# ----------------------------------------------------------------------------
# nearest neighbours
# ----------------------------------------------------------------------------

def test_nearest_exact_line(line_store):
    res = nearest_exact(line_store, [0.6], k=2)
    assert [r.word for r in res] == ["b", "a"]
    assert res[0].distance == pytest.approx(0.4)
    assert res[1].distance == pytest.approx(0.6)


def test_own_vector_is_nearest(random_store):
    for w in ("w0", "w17", "w999"):
        res = nearest_exact(random_store, lookup(random_store, w), 1)[0]
        assert res.word == w
        assert res.distance == 0.0


def test_ties_prefer_lower_index():
    store = from_arrays(["x", "y", "z"], [[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0]])
    res = nearest_exact(store, [0.0, 0.0], k=3)
    assert [r.index for r in res] == [0, 1, 2]
    assert nearest_exact(store, [1.0, 0.0], 1)[0].word == "x"


def test_full_vocabulary_sorted(random_store):
    q = np.zeros(random_store.dimension)
    res = nearest_exact(random_store, q, k=len(random_store))
    assert len(res) == len(random_store)
    d = [r.distance for r in res]
    assert d == sorted(d)


def test_query_dimension_checked(line_store):
    with pytest.raises(DimensionMismatchError):
        nearest_exact(line_store, [0.0, 1.0], 1)
    with pytest.raises(ValueError):
        nearest_exact(line_store, [0.0], 4)


def test_accelerated_recall(random_store):
    index = build_index(random_store)
    gen = np.random.default_rng(3)
    base = random_store.vectors[gen.integers(0, len(random_store), size=1000)]
    queries = base + gen.normal(0.0, 0.8, size=base.shape)
    assert recall_at_1(index, queries) >= 0.99


def test_exact_flag_matches_oracle(random_store):
    index = build_index(random_store, exact=True)
    gen = np.random.default_rng(5)
    for q in gen.normal(size=(20, random_store.dimension)):
        assert nearest_fast(index, q, 3) == nearest_exact(random_store, q, 3)


def test_nearest_ids_batch(random_store):
    index = build_index(random_store)
    ids = index.nearest_ids(random_store.vectors[:50])
    np.testing.assert_array_equal(ids, np.arange(50))
    assert index.nearest_ids(np.empty((0, random_store.dimension))).size == 0


def test_search_batch_sorted(random_store):
    index = build_index(random_store)
    gen = np.random.default_rng(9)
    for res in index.search_batch(gen.normal(size=(5, random_store.dimension)), k=5):
        d = [r.distance for r in res]
        assert d == sorted(d)
