import numpy as np
import pytest

from embedding_store import from_arrays
from lm_scoring_client import MockScorer, ScoringClient


def write_glove(path, rows):
    with open(path, "w", encoding="utf-8") as f:
        for word, vec in rows:
            f.write(word + " " + " ".join(repr(float(x)) for x in vec) + "\n")
    return path


@pytest.fixture
def glove_file(tmp_path):
    """Three words, d = 3."""
    return write_glove(tmp_path / "tiny.txt", [
        ("cat", [0.1, 0.2, 0.3]),
        ("dog", [0.4, 0.5, 0.6]),
        ("haiti", [-1.0, 0.0, 2.5]),
    ])


@pytest.fixture
def line_store():
    """1-D store: a@0, b@1, c@5."""
    return from_arrays(["a", "b", "c"], [[0.0], [1.0], [5.0]])


@pytest.fixture
def pair_store():
    """Two words 10 apart on a line."""
    return from_arrays(["w0", "w1"], [[0.0], [10.0]])


@pytest.fixture
def random_store():
    gen = np.random.default_rng(7)
    vecs = gen.normal(size=(1000, 25))
    return from_arrays([f"w{i}" for i in range(1000)], vecs)


@pytest.fixture
def clustered_store():
    """
    19 tight clusters of 10 near-synonyms far apart from each other, plus
    10 isolated words. Words inside a cluster swap often; isolated words never move.
    """
    gen = np.random.default_rng(11)
    dim = 5
    words, vecs = [], []
    for c in range(19):
        centre = np.zeros(dim)
        centre[c % dim] = 100.0 * (c + 1)
        for j in range(10):
            words.append(f"c{c}_{j}")
            vecs.append(centre + gen.normal(0.0, 0.1, size=dim))
    for j in range(10):
        centre = np.full(dim, -100.0 * (j + 1))
        words.append(f"iso{j}")
        vecs.append(centre)
    return from_arrays(words, np.array(vecs))


@pytest.fixture
def uniform_mock():
    return MockScorer("uniform", vocab_size=1000)


@pytest.fixture
def uniform_client(uniform_mock):
    return ScoringClient(uniform_mock, max_in_flight=4, retries=0, backoff=0.0)


@pytest.fixture
def make_client():
    def _make(**opts):
        kind = opts.pop("kind", "uniform")
        return ScoringClient(MockScorer(kind, **opts), max_in_flight=4, retries=0, backoff=0.0)
    return _make
