"""
embedding_store.py
──────────────────
▪ Loads a GloVe-style text file (word c1 c2 ... cd per line) into memory
▪ Exact nearest-neighbour oracle (Euclidean, ties → lower vocabulary index)
▪ Accelerated index on scikit-learn's NearestNeighbors, re-ranked in float64

The store is read-only once built; share it freely between worker threads.
"""

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
from sklearn.neighbors import NearestNeighbors

logger = logging.getLogger(__name__)

# =============================================================================
# CONFIG & CONSTANTS
# =============================================================================

# Extra neighbours fetched by the accelerated index before the exact re-rank.
CANDIDATE_SLACK = 8

# Rows of query vectors handed to NearestNeighbors in one call.
QUERY_CHUNK = 1024

# Log a progress line every N lines while loading large files.
LOAD_LOG_EVERY = 100_000


# =============================================================================
# ERRORS
# =============================================================================

class EmbeddingFormatError(ValueError):
    """Malformed embedding file (bad line, duplicate word, empty file)."""


class DimensionMismatchError(EmbeddingFormatError):
    """A vector does not have the store's dimension."""


# =============================================================================
# TYPES
# =============================================================================

@dataclass(frozen=True)
class NeighborResult:
    word: str
    index: int
    distance: float


class EmbeddingStore:
    """Vocabulary + vectors; index i of `words` is row i of `vectors`."""

    def __init__(self, words: Sequence[str], vectors: np.ndarray,
                 source: str = "<memory>", checksum: Optional[str] = None):
        vectors = np.array(vectors, dtype=np.float64, copy=True)
        if vectors.ndim != 2:
            raise EmbeddingFormatError(f"vectors must be a 2-D matrix, got shape {vectors.shape}")
        if len(words) == 0 or vectors.shape[0] == 0:
            raise EmbeddingFormatError("an embedding store needs at least one word")
        if vectors.shape[1] < 1:
            raise EmbeddingFormatError("an embedding store needs at least one dimension")
        if len(words) != vectors.shape[0]:
            raise EmbeddingFormatError(
                f"{len(words)} words but {vectors.shape[0]} vector rows"
            )
        if not np.all(np.isfinite(vectors)):
            bad = int(np.flatnonzero(~np.isfinite(vectors).all(axis=1))[0])
            raise EmbeddingFormatError(f"non-finite coordinate in row {bad} ({words[bad]!r})")

        index_of: Dict[str, int] = {}
        for i, w in enumerate(words):
            if w in index_of:
                raise EmbeddingFormatError(
                    f"duplicate word {w!r} at rows {index_of[w]} and {i}"
                )
            index_of[w] = i

        vectors.setflags(write=False)
        self._words = tuple(words)
        self._vectors = vectors
        self._index_of = index_of
        self.source = source
        self.checksum = checksum

    @property
    def words(self) -> tuple:
        return self._words

    @property
    def vectors(self) -> np.ndarray:
        return self._vectors

    @property
    def dimension(self) -> int:
        return int(self._vectors.shape[1])

    def index_of(self, word: str) -> Optional[int]:
        return self._index_of.get(word)

    def __len__(self) -> int:
        return len(self._words)

    def __contains__(self, word: object) -> bool:
        return word in self._index_of

    def __repr__(self) -> str:
        return f"EmbeddingStore(|V|={len(self)}, d={self.dimension}, source={self.source!r})"


# =============================================================================
# LOADING
# =============================================================================

def from_arrays(words: Sequence[str], vectors: Union[np.ndarray, Sequence[Sequence[float]]],
                source: str = "<memory>") -> EmbeddingStore:
    """Build a store from in-memory words and vectors (synthetic stores, tests)."""
    return EmbeddingStore(list(words), np.asarray(vectors, dtype=np.float64), source=source)


def load_embeddings(path: Union[str, Path], expected_dim: Optional[int] = None) -> EmbeddingStore:
    """
    Read a whitespace-separated embedding file, one `word c1 ... cd` per line.

    Dimension comes from the first line and is checked on every later line
    (and against expected_dim when given). Errors name the 1-based line number.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"embedding file not found: {path}")
    if expected_dim is not None and expected_dim < 1:
        raise ValueError(f"expected_dim must be >= 1, got {expected_dim}")

    sha = hashlib.sha256()
    words: List[str] = []
    rows: List[np.ndarray] = []
    first_seen: Dict[str, int] = {}
    dim = expected_dim

    logger.info("[LOAD] reading embeddings from %s", path)
    with open(path, "rb") as fh:
        for line_no, raw in enumerate(fh, start=1):
            sha.update(raw)
            try:
                line = raw.decode("utf-8").rstrip("\r\n")
            except UnicodeDecodeError as e:
                raise EmbeddingFormatError(f"line {line_no}: not valid UTF-8 ({e})")
            if not line.strip():
                continue

            parts = line.rstrip(" ").split(" ")
            word, coords = parts[0], parts[1:]
            if word == "":
                raise EmbeddingFormatError(f"line {line_no}: empty word")
            if dim is None:
                if len(coords) == 0:
                    raise EmbeddingFormatError(f"line {line_no}: word {word!r} has no coordinates")
                dim = len(coords)
            elif len(coords) != dim:
                raise DimensionMismatchError(
                    f"line {line_no}: expected {dim} coordinates for {word!r}, found {len(coords)}"
                )
            if word in first_seen:
                raise EmbeddingFormatError(
                    f"line {line_no}: duplicate word {word!r} (first on line {first_seen[word]})"
                )
            try:
                row = np.array(coords, dtype=np.float64)
            except ValueError:
                raise EmbeddingFormatError(f"line {line_no}: non-numeric coordinate for {word!r}")
            if not np.all(np.isfinite(row)):
                raise EmbeddingFormatError(f"line {line_no}: non-finite coordinate for {word!r}")

            first_seen[word] = line_no
            words.append(word)
            rows.append(row)
            if len(words) % LOAD_LOG_EVERY == 0:
                logger.info("[LOAD] %d words read", len(words))

    if not words:
        raise EmbeddingFormatError(f"{path}: no embeddings found (empty file)")

    store = EmbeddingStore(words, np.vstack(rows), source=str(path), checksum=sha.hexdigest())
    logger.info("[LOAD] %s", store)
    return store


# =============================================================================
# QUERIES
# =============================================================================

def lookup(store: EmbeddingStore, word: str) -> Optional[np.ndarray]:
    """Stored vector for `word`, or None when it is out of vocabulary."""
    i = store.index_of(word)
    if i is None:
        return None
    return store.vectors[i]


def _as_query(store: EmbeddingStore, query) -> np.ndarray:
    q = np.asarray(query, dtype=np.float64)
    if q.ndim != 1 or q.shape[0] != store.dimension:
        raise DimensionMismatchError(
            f"query has shape {q.shape}, store dimension is {store.dimension}"
        )
    return q


def _check_k(store: EmbeddingStore, k: int) -> None:
    if not 1 <= k <= len(store):
        raise ValueError(f"k must be in [1, {len(store)}], got {k}")


def _ranked(store: EmbeddingStore, ids: np.ndarray, dists: np.ndarray, k: int) -> List[NeighborResult]:
    order = np.lexsort((ids, dists))[:k]
    return [NeighborResult(store.words[int(ids[j])], int(ids[j]), float(dists[j])) for j in order]


def nearest_exact(store: EmbeddingStore, query, k: int = 1) -> List[NeighborResult]:
    """Brute-force k nearest words, sorted by (distance, index)."""
    q = _as_query(store, query)
    _check_k(store, k)
    dists = np.linalg.norm(store.vectors - q, axis=1)
    if k < len(store):
        kth = np.partition(dists, k - 1)[k - 1]
        ids = np.flatnonzero(dists <= kth)
    else:
        ids = np.arange(len(store))
    return _ranked(store, ids, dists[ids], k)


class NearestIndex:
    """
    Nearest-neighbour index over a store.

    exact=True answers every query with nearest_exact (bit-identical output).
    Otherwise a float32 brute-force NearestNeighbors model proposes k + slack
    candidates which are re-ranked with float64 distances.
    """

    def __init__(self, store: EmbeddingStore, exact: bool = False, slack: int = CANDIDATE_SLACK):
        self.store = store
        self.exact = exact
        self.slack = max(0, int(slack))
        self._nn = None
        if not exact:
            self._nn = NearestNeighbors(algorithm="brute", metric="euclidean")
            self._nn.fit(store.vectors.astype(np.float32))

    def _candidates(self, queries: np.ndarray, k: int) -> np.ndarray:
        n_cand = min(len(self.store), k + self.slack)
        blocks = []
        for start in range(0, queries.shape[0], QUERY_CHUNK):
            chunk = queries[start:start + QUERY_CHUNK].astype(np.float32)
            blocks.append(self._nn.kneighbors(chunk, n_neighbors=n_cand, return_distance=False))
        return np.vstack(blocks)

    def _as_queries(self, queries) -> np.ndarray:
        q = np.asarray(queries, dtype=np.float64)
        if q.ndim == 1:
            q = q[None, :]
        if q.ndim != 2 or q.shape[1] != self.store.dimension:
            raise DimensionMismatchError(
                f"queries have shape {q.shape}, store dimension is {self.store.dimension}"
            )
        return q

    def search(self, query, k: int = 1) -> List[NeighborResult]:
        return self.search_batch(_as_query(self.store, query)[None, :], k)[0]

    def search_batch(self, queries, k: int = 1) -> List[List[NeighborResult]]:
        q = self._as_queries(queries)
        _check_k(self.store, k)
        if self.exact:
            return [nearest_exact(self.store, row, k) for row in q]
        cand = self._candidates(q, k)
        out = []
        for row, ids in zip(q, cand):
            dists = np.linalg.norm(self.store.vectors[ids] - row, axis=1)
            out.append(_ranked(self.store, ids, dists, k))
        return out

    def nearest_ids(self, queries) -> np.ndarray:
        """Top-1 vocabulary index for every row of `queries`."""
        q = self._as_queries(queries)
        if q.shape[0] == 0:
            return np.empty(0, dtype=np.int64)
        if self.exact:
            return np.array([nearest_exact(self.store, row, 1)[0].index for row in q], dtype=np.int64)
        cand = self._candidates(q, 1)
        best = np.empty(q.shape[0], dtype=np.int64)
        for j, (row, ids) in enumerate(zip(q, cand)):
            dists = np.linalg.norm(self.store.vectors[ids] - row, axis=1)
            best[j] = ids[np.lexsort((ids, dists))[0]]
        return best


def build_index(store: EmbeddingStore, exact: bool = False) -> NearestIndex:
    kind = "exact" if exact else "accelerated"
    logger.info("[INDEX] building %s nearest-neighbour index over %d words", kind, len(store))
    return NearestIndex(store, exact=exact)


def nearest_fast(index: NearestIndex, query, k: int = 1) -> List[NeighborResult]:
    return index.search(query, k)


def recall_at_1(index: NearestIndex, queries: Iterable) -> float:
    """Share of queries whose top-1 matches nearest_exact's top-1."""
    q = index._as_queries(np.asarray(list(queries), dtype=np.float64))
    fast = index.nearest_ids(q)
    hits = sum(int(f == nearest_exact(index.store, row, 1)[0].index) for f, row in zip(fast, q))
    return hits / max(1, q.shape[0])
