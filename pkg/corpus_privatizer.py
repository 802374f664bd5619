"""
corpus_privatizer.py
────────────────────
▪ Tokenizer: whitespace split, leading/trailing punctuation peeled off as
  their own tokens (a run of one mark, like "--", stays whole), hyphenated
  words kept whole, lowercase by default
▪ Privatizes documents token by token (streams keyed by seed, doc_id, position)
▪ Streams whole corpora (jsonl or one-document-per-line txt) through a
  bounded thread pool; output order = input order for any parallelism,
  or sorted by doc_id on request
▪ Writes <output>.manifest.json with config, embedding checksum and counts
"""

import itertools
import json
import logging
import unicodedata
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Tuple, Union

from joblib import Parallel, delayed
from tqdm import tqdm

import settings
from dp_mechanism import (
    OOV_POLICIES,
    PrivacyBudget,
    TokenCounts,
    UINT64_MAX,
    perturb_tokens_counted,
)
from embedding_store import EmbeddingStore, NearestIndex

logger = logging.getLogger(__name__)

# =============================================================================
# CONFIG & CONSTANTS
# =============================================================================

INPUT_FORMATS = ("jsonl", "txt")
OUTPUT_ORDERS = ("input", "doc_id")

# Documents handed to the worker pool per batch; bounds memory on big corpora.
CHUNK_DOCS = 256


# =============================================================================
# ERRORS & TYPES
# =============================================================================

class CorpusInputError(ValueError):
    pass


class DuplicateDocumentError(CorpusInputError):
    pass


@dataclass(frozen=True)
class Document:
    doc_id: int
    text: str


@dataclass(frozen=True)
class PrivatizationConfig:
    epsilon: PrivacyBudget
    seed: int = settings.SEED
    oov_policy: str = "passthrough"
    lowercase: bool = True
    marker: str = settings.OOV_MARKER

    def __post_init__(self):
        if self.oov_policy not in OOV_POLICIES:
            raise ValueError(f"unknown OOV policy {self.oov_policy!r}; expected one of {OOV_POLICIES}")
        if not 0 <= int(self.seed) <= UINT64_MAX:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed}")

    def to_dict(self) -> Dict:
        return {
            "epsilon": self.epsilon.label,
            "seed": int(self.seed),
            "oov_policy": self.oov_policy,
            "lowercase": self.lowercase,
            "marker": self.marker,
        }


@dataclass
class RunManifest:
    config: Dict
    embeddings: str
    embeddings_sha256: Optional[str]
    exact_nn: bool
    parallelism: int
    output_order: str = "input"
    documents: int = 0
    tokens_total: int = 0
    tokens_perturbed: int = 0
    tokens_oov: int = 0
    oov_passed_through: int = 0
    oov_dropped: int = 0
    oov_marked: int = 0
    started_at: str = field(default_factory=lambda: datetime.now().isoformat(timespec="seconds"))
    finished_at: Optional[str] = None

    def add(self, counts: TokenCounts) -> None:
        self.documents += 1
        self.tokens_total += counts.total
        self.tokens_perturbed += counts.perturbed
        self.tokens_oov += counts.oov
        self.oov_passed_through += counts.oov_passed_through
        self.oov_dropped += counts.oov_dropped
        self.oov_marked += counts.oov_marked

    def write(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(asdict(self), f, indent=2)


# =============================================================================
# TOKENIZATION
# =============================================================================

def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def _punct_runs(chars: str) -> List[str]:
    # "--" and "..." stay whole; ")," splits into ")" and ","
    return ["".join(g) for _, g in itertools.groupby(chars)]


def tokenize(text: str, lowercase: bool = True) -> List[str]:
    """
    "Port-au-Prince, Haiti (CNN) -- ok..." →
    ["port-au-prince", ",", "haiti", "(", "cnn", ")", "--", "ok", "..."]
    """
    tokens: List[str] = []
    for chunk in text.split():
        start, end = 0, len(chunk)
        while start < end and _is_punct(chunk[start]):
            start += 1
        while end > start and _is_punct(chunk[end - 1]):
            end -= 1
        tokens.extend(_punct_runs(chunk[:start]))
        if start < end:
            tokens.append(chunk[start:end])
        tokens.extend(_punct_runs(chunk[end:]))
    if lowercase:
        tokens = [t.lower() for t in tokens]
    return tokens


def detokenize(tokens: List[str]) -> str:
    return " ".join(tokens)


# =============================================================================
# DOCUMENTS
# =============================================================================

def privatize_document_counted(store: EmbeddingStore, doc: Document, cfg: PrivatizationConfig,
                               index: Optional[NearestIndex] = None) -> Tuple[Document, TokenCounts]:
    tokens = tokenize(doc.text, lowercase=cfg.lowercase)
    out, counts = perturb_tokens_counted(
        store, tokens, cfg.epsilon, int(cfg.seed), doc.doc_id,
        oov_policy=cfg.oov_policy, index=index, marker=cfg.marker,
    )
    return Document(doc_id=doc.doc_id, text=detokenize(out)), counts


def privatize_document(store: EmbeddingStore, doc: Document, cfg: PrivatizationConfig,
                       index: Optional[NearestIndex] = None) -> Document:
    return privatize_document_counted(store, doc, cfg, index)[0]


def _privatize_chunk(store, docs, cfg, index):
    return [privatize_document_counted(store, d, cfg, index) for d in docs]


def _chunks(documents: Iterable[Document], size: int) -> Iterator[List[Document]]:
    batch: List[Document] = []
    for d in documents:
        batch.append(d)
        if len(batch) >= size:
            yield batch
            batch = []
    if batch:
        yield batch


def iter_privatized(store: EmbeddingStore, documents: Iterable[Document], cfg: PrivatizationConfig,
                    manifest: RunManifest, parallelism: int = 1,
                    index: Optional[NearestIndex] = None) -> Iterator[Document]:
    """Yields privatized documents in input order and fills `manifest` as it goes."""
    seen = set()
    n_jobs = max(1, int(parallelism))
    with Parallel(n_jobs=n_jobs, prefer="threads") as pool:
        for batch in _chunks(documents, CHUNK_DOCS):
            for d in batch:
                if d.doc_id in seen:
                    raise DuplicateDocumentError(f"duplicate doc_id {d.doc_id}")
                if not 0 <= d.doc_id <= UINT64_MAX:
                    raise CorpusInputError(f"doc_id {d.doc_id} is not an unsigned 64-bit integer")
                seen.add(d.doc_id)

            size = max(1, -(-len(batch) // n_jobs))
            parts = pool(delayed(_privatize_chunk)(store, batch[i:i + size], cfg, index)
                         for i in range(0, len(batch), size))
            for part in parts:
                for doc, counts in part:
                    manifest.add(counts)
                    yield doc
    manifest.finished_at = datetime.now().isoformat(timespec="seconds")


def privatize_corpus(store: EmbeddingStore, documents: Iterable[Document], cfg: PrivatizationConfig,
                     parallelism: int = 1,
                     index: Optional[NearestIndex] = None) -> Tuple[Iterator[Document], RunManifest]:
    """
    Returns (document stream, manifest). The manifest is complete once the
    stream has been fully consumed.
    """
    manifest = RunManifest(
        config=cfg.to_dict(),
        embeddings=store.source,
        embeddings_sha256=store.checksum,
        exact_nn=index is None or index.exact,
        parallelism=int(parallelism),
    )
    return iter_privatized(store, documents, cfg, manifest, parallelism, index), manifest


# =============================================================================
# FILE I/O
# =============================================================================

def read_documents(path: Union[str, Path], fmt: str = "jsonl") -> Iterator[Document]:
    """
    jsonl: one {"id": <uint64>, "text": <str>} object per line.
    txt:   one document per line, ids assigned 0, 1, 2, ...
    """
    if fmt not in INPUT_FORMATS:
        raise ValueError(f"unknown input format {fmt!r}; expected one of {INPUT_FORMATS}")
    path = Path(path)
    if not path.is_file():
        raise CorpusInputError(f"input not found: {path}")

    with open(path, "rb") as f:
        for line_no, raw in enumerate(f, start=1):
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError as e:
                raise CorpusInputError(
                    f"{path.name} record on line {line_no}: not valid UTF-8 ({e.reason} at byte {e.start})"
                )
            if fmt == "txt":
                yield Document(doc_id=line_no - 1, text=line.rstrip("\r\n"))
                continue

            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusInputError(f"{path.name} record on line {line_no}: invalid JSON ({e})")
            if not isinstance(rec, dict) or "id" not in rec or "text" not in rec:
                raise CorpusInputError(f"{path.name} record on line {line_no}: needs 'id' and 'text'")
            doc_id, text = rec["id"], rec["text"]
            if isinstance(doc_id, bool) or not isinstance(doc_id, int) or not 0 <= doc_id <= UINT64_MAX:
                raise CorpusInputError(
                    f"{path.name} record on line {line_no}: id must be an unsigned 64-bit integer, got {doc_id!r}"
                )
            if not isinstance(text, str):
                raise CorpusInputError(f"{path.name} record on line {line_no}: text must be a string")
            yield Document(doc_id=doc_id, text=text)


def write_documents(documents: Iterable[Document], path: Union[str, Path], fmt: str = "jsonl") -> int:
    """
    Writes to <path>.tmp and renames once `documents` is exhausted, so a
    failure mid-stream never leaves a partial output behind.
    """
    if fmt not in INPUT_FORMATS:
        raise ValueError(f"unknown output format {fmt!r}; expected one of {INPUT_FORMATS}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    n = 0
    try:
        with open(tmp, "w", encoding="utf-8", newline="\n") as f:
            for d in documents:
                if fmt == "jsonl":
                    f.write(json.dumps({"id": d.doc_id, "text": d.text}, ensure_ascii=False) + "\n")
                else:
                    f.write(d.text + "\n")
                n += 1
        tmp.replace(path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise
    return n


def manifest_path_for(output: Union[str, Path]) -> Path:
    output = Path(output)
    return output.with_name(output.name + ".manifest.json")


def privatize_file(store: EmbeddingStore, input_path: Union[str, Path], output_path: Union[str, Path],
                   cfg: PrivatizationConfig, fmt: str = "jsonl", parallelism: int = 1,
                   index: Optional[NearestIndex] = None, order: str = "input") -> RunManifest:
    """
    order="input" streams documents out as they come in; order="doc_id"
    holds the whole corpus and writes it sorted by doc_id.
    """
    if order not in OUTPUT_ORDERS:
        raise ValueError(f"unknown output order {order!r}; expected one of {OUTPUT_ORDERS}")
    docs = read_documents(input_path, fmt)
    if settings.SHOW_PROGRESS:
        docs = tqdm(docs, desc="privatize", unit="doc")
    stream, manifest = privatize_corpus(store, docs, cfg, parallelism=parallelism, index=index)
    manifest.output_order = order
    if order == "doc_id":
        stream = iter(sorted(stream, key=lambda d: d.doc_id))
    write_documents(stream, output_path, fmt)
    manifest.write(manifest_path_for(output_path))
    logger.info(
        "[PRIVATIZE] %d documents, %d tokens (%d perturbed, %d OOV) → %s",
        manifest.documents, manifest.tokens_total, manifest.tokens_perturbed, manifest.tokens_oov, output_path,
    )
    return manifest
