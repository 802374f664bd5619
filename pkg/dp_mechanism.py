"""
dp_mechanism.py
───────────────
Word-level metric-DP substitution: embed → add noise with density
∝ exp(-ε‖z‖) → remap to the nearest vocabulary word.

Noise = uniform direction on the unit sphere (normalised Gaussian vector)
times a Gamma(shape=d, scale=1/ε) magnitude. ε = ∞ bypasses the sampler.

Every draw comes from a counter-based Philox stream keyed by
(seed, stream key), so results do not depend on scheduling.
"""

import math
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

import settings
from embedding_store import EmbeddingStore, NearestIndex, lookup, nearest_exact

logger = logging.getLogger(__name__)

# =============================================================================
# CONFIG & CONSTANTS
# =============================================================================

# Stream-key domains; keeps privatization and calibration draws apart.
STREAM_PRIVATIZE = 0
STREAM_CALIBRATE = 1
STREAM_SAMPLE_WORDS = 2

OOV_POLICIES = ("passthrough", "drop", "marker")

UINT64_MAX = 2 ** 64 - 1


# =============================================================================
# ERRORS
# =============================================================================

class InvalidBudgetError(ValueError):
    pass


class OutOfVocabularyError(KeyError):
    pass


# =============================================================================
# TYPES
# =============================================================================

@dataclass(frozen=True)
class PrivacyBudget:
    """ε in (0, ∞]; ∞ means no privatization."""
    epsilon: float

    def __post_init__(self):
        try:
            eps = float(self.epsilon)
        except (TypeError, ValueError):
            raise InvalidBudgetError(f"epsilon must be a number, got {self.epsilon!r}")
        if math.isnan(eps) or eps <= 0:
            raise InvalidBudgetError(f"epsilon must be > 0, got {self.epsilon!r}")
        object.__setattr__(self, "epsilon", eps)

    @property
    def is_identity(self) -> bool:
        return math.isinf(self.epsilon)

    @property
    def label(self) -> str:
        if self.is_identity:
            return "inf"
        return f"{self.epsilon:g}"

    @classmethod
    def parse(cls, text: Union[str, float, int]) -> "PrivacyBudget":
        """Accepts numbers and 'inf' / 'infinity' / '∞'."""
        if isinstance(text, (int, float)):
            return cls(float(text))
        t = str(text).strip().lower()
        if t in ("inf", "infinity", "∞", "+inf", "none"):
            return cls(math.inf)
        try:
            return cls(float(t))
        except ValueError:
            raise InvalidBudgetError(f"cannot parse epsilon {text!r}")


@dataclass(frozen=True)
class NoiseSample:
    direction: np.ndarray
    magnitude: float

    @property
    def vector(self) -> np.ndarray:
        return self.direction * self.magnitude


@dataclass(frozen=True)
class RngStream:
    """Counter-based stream: same (seed, stream_key) → same draws."""
    seed: int
    stream_key: Tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not 0 <= int(self.seed) <= UINT64_MAX:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        key = tuple(int(k) for k in self.stream_key)
        if any(k < 0 for k in key):
            raise ValueError(f"stream key entries must be non-negative, got {key}")
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "stream_key", key)

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.stream_key)
        return np.random.Generator(np.random.Philox(ss))


# =============================================================================
# NOISE
# =============================================================================

def _unit_direction(gen: np.random.Generator, dim: int) -> np.ndarray:
    v = gen.standard_normal(dim)
    norm = np.linalg.norm(v)
    if norm == 0.0:
        # measure-zero event; any fixed unit vector keeps the invariant
        v = np.zeros(dim)
        v[0] = 1.0
        return v
    return v / norm


def sample_noise(budget: PrivacyBudget, dim: int, rng: RngStream) -> NoiseSample:
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    if budget.is_identity:
        direction = np.zeros(dim)
        direction[0] = 1.0
        return NoiseSample(direction=direction, magnitude=0.0)
    gen = rng.generator()
    direction = _unit_direction(gen, dim)
    magnitude = float(gen.gamma(shape=dim, scale=1.0 / budget.epsilon))
    return NoiseSample(direction=direction, magnitude=magnitude)


# =============================================================================
# MECHANISM
# =============================================================================

def _remap(store: EmbeddingStore, noisy: np.ndarray, index: Optional[NearestIndex]) -> int:
    if index is None:
        return nearest_exact(store, noisy, 1)[0].index
    return int(index.nearest_ids(noisy[None, :])[0])


def perturb_word(store: EmbeddingStore, word: str, budget: PrivacyBudget, rng: RngStream,
                 index: Optional[NearestIndex] = None) -> str:
    """M(word): always returns a vocabulary member (possibly `word` itself)."""
    vec = lookup(store, word)
    if vec is None:
        raise OutOfVocabularyError(word)
    if budget.is_identity:
        return word
    noise = sample_noise(budget, store.dimension, rng)
    return store.words[_remap(store, vec + noise.vector, index)]


@dataclass
class TokenCounts:
    total: int = 0
    perturbed: int = 0
    oov: int = 0
    oov_passed_through: int = 0
    oov_dropped: int = 0
    oov_marked: int = 0

    def add(self, other: "TokenCounts") -> None:
        self.total += other.total
        self.perturbed += other.perturbed
        self.oov += other.oov
        self.oov_passed_through += other.oov_passed_through
        self.oov_dropped += other.oov_dropped
        self.oov_marked += other.oov_marked


def perturb_tokens_counted(store: EmbeddingStore, tokens: Sequence[str], budget: PrivacyBudget,
                           seed: int, doc_id: int, oov_policy: str = "passthrough",
                           index: Optional[NearestIndex] = None,
                           marker: str = None) -> Tuple[List[str], TokenCounts]:
    """perturb_tokens plus the per-call token bookkeeping used by the corpus manifest."""
    if oov_policy not in OOV_POLICIES:
        raise ValueError(f"unknown OOV policy {oov_policy!r}; expected one of {OOV_POLICIES}")
    marker = settings.OOV_MARKER if marker is None else marker
    counts = TokenCounts(total=len(tokens))

    positions, ids = [], []
    for pos, tok in enumerate(tokens):
        i = store.index_of(tok)
        if i is not None:
            positions.append(pos)
            ids.append(i)

    out: List[Optional[str]] = list(tokens)
    if positions and not budget.is_identity:
        noisy = np.empty((len(positions), store.dimension))
        for row, (pos, i) in enumerate(zip(positions, ids)):
            stream = RngStream(seed, (STREAM_PRIVATIZE, doc_id, pos))
            noisy[row] = store.vectors[i] + sample_noise(budget, store.dimension, stream).vector
        if index is None:
            new_ids = [nearest_exact(store, v, 1)[0].index for v in noisy]
        else:
            new_ids = index.nearest_ids(noisy)
        for pos, j in zip(positions, new_ids):
            out[pos] = store.words[int(j)]
    counts.perturbed = len(positions)

    in_vocab = set(positions)
    for pos, tok in enumerate(tokens):
        if pos in in_vocab:
            continue
        counts.oov += 1
        if oov_policy == "passthrough":
            counts.oov_passed_through += 1
        elif oov_policy == "drop":
            counts.oov_dropped += 1
            out[pos] = None
        else:
            counts.oov_marked += 1
            out[pos] = marker

    return [t for t in out if t is not None], counts


def perturb_tokens(store: EmbeddingStore, tokens: Sequence[str], budget: PrivacyBudget,
                   seed: int, doc_id: int, oov_policy: str = "passthrough",
                   index: Optional[NearestIndex] = None, marker: str = None) -> List[str]:
    """
    Perturb every in-vocabulary token on its own stream (seed, doc_id, position).
    OOV tokens follow `oov_policy`; only 'drop' changes the length.
    """
    out, _ = perturb_tokens_counted(store, tokens, budget, seed, doc_id,
                                    oov_policy=oov_policy, index=index, marker=marker)
    return out
