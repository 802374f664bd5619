"""
bias_datasets.py
────────────────
Loaders for the bias benchmarks and the pseudo-perplexity corpus:

▪ StereoSet development JSON (intrasentence + intersentence)
▪ CrowS-Pairs CSV, category names mapped to report rows
▪ raw WikiText with a seeded fractional subset

plus a synthetic, length-balanced suite for hermetic runs.
"""

import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import pandas as pd

from bias_bench import (
    ANTI,
    BLANK,
    CROWS_CATEGORIES,
    INTERSENTENCE,
    INTRASENTENCE,
    OPTION_LABELS,
    STEREO,
    STEREOSET_CATEGORIES,
    UNRELATED,
    BenchmarkError,
    CrowsPair,
    StereoSetItem,
)
from corpus_privatizer import tokenize
from dp_mechanism import RngStream

logger = logging.getLogger(__name__)

# =============================================================================
# CONFIG & CONSTANTS
# =============================================================================

GOLD_LABELS = {"stereotype": STEREO, "anti-stereotype": ANTI, "unrelated": UNRELATED}

CROWS_CATEGORY_MAP = {
    "race-color": "race",
    "socioeconomic": "occupation",
    "sexual-orientation": "sexuality",
    "physical-appearance": "appearance",
    "gender": "gender",
    "age": "age",
    "religion": "religion",
    "nationality": "nationality",
    "disability": "disability",
}
CROWS_COLUMNS = ("sent_more", "sent_less", "stereo_antistereo", "bias_type")

WIKITEXT_FRACTION = 0.1
WIKITEXT_SUBSET_STREAM = 3

# Synthetic suite vocabulary
SYNTH_CUES = {STEREO: "typical", ANTI: "atypical", UNRELATED: "purple"}
SYNTH_GROUPS = ("groupx", "groupy")
SYNTH_NOUNS = ("person", "neighbour", "colleague", "student", "parent")
SYNTH_PER_CATEGORY = 25


class DatasetFormatError(ValueError):
    pass


# =============================================================================
# STEREOSET
# =============================================================================

def _split_blank(context: str, sentence: str) -> Optional[str]:
    """Text that fills BLANK in `context` to give `sentence`, or None when they disagree."""
    pre, _, post = context.partition(BLANK)
    if not (sentence.lower().startswith(pre.lower()) and sentence.lower().endswith(post.lower())):
        return None
    if len(pre) + len(post) > len(sentence):
        return None
    return sentence[len(pre):len(sentence) - len(post)]


def _stereoset_item(task: str, rec: Dict, lowercase: bool) -> StereoSetItem:
    category = rec.get("bias_type")
    if category not in STEREOSET_CATEGORIES:
        raise DatasetFormatError(f"StereoSet item {rec.get('id')!r}: unknown bias_type {category!r}")
    context = rec.get("context")
    sentences = rec.get("sentences")
    if not isinstance(context, str) or not isinstance(sentences, list):
        raise DatasetFormatError(f"StereoSet item {rec.get('id')!r}: needs 'context' and 'sentences'")

    options: Dict[str, List[str]] = {}
    for s in sentences:
        label = GOLD_LABELS.get(s.get("gold_label"))
        if label is None:
            raise DatasetFormatError(f"StereoSet item {rec.get('id')!r}: unknown gold_label {s.get('gold_label')!r}")
        if label in options:
            raise DatasetFormatError(f"StereoSet item {rec.get('id')!r}: two {label} sentences")
        text = s.get("sentence", "")
        if task == INTRASENTENCE:
            fill = _split_blank(context, text)
            if fill is None:
                raise DatasetFormatError(
                    f"StereoSet item {rec.get('id')!r}: sentence {text!r} does not fit context {context!r}"
                )
            options[label] = tokenize(fill, lowercase)
        else:
            options[label] = tokenize(text, lowercase)

    if task == INTRASENTENCE:
        pre, _, post = context.partition(BLANK)
        ctx = tokenize(pre, lowercase) + [BLANK] + tokenize(post, lowercase)
    else:
        ctx = tokenize(context, lowercase)
    try:
        return StereoSetItem(task=task, category=category, context=ctx, options=options,
                             item_id=str(rec.get("id", "")))
    except BenchmarkError as e:
        raise DatasetFormatError(str(e))


def load_stereoset(path: Union[str, Path], tasks: Sequence[str] = (INTRASENTENCE, INTERSENTENCE),
                   lowercase: bool = False) -> List[StereoSetItem]:
    """Items whose sentences cannot be aligned with their context are skipped with a warning."""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise DatasetFormatError(f"{path.name}: invalid JSON ({e})")
    data = doc.get("data") if isinstance(doc, dict) else None
    if not isinstance(data, dict):
        raise DatasetFormatError(f"{path.name}: expected a top-level 'data' object")

    items: List[StereoSetItem] = []
    skipped = 0
    for task in tasks:
        for rec in data.get(task, []):
            try:
                items.append(_stereoset_item(task, rec, lowercase))
            except DatasetFormatError as e:
                skipped += 1
                logger.warning("[LOAD] WARN: %s", e)
    if skipped:
        logger.warning("[LOAD] WARN: skipped %d malformed StereoSet items", skipped)
    logger.info("[LOAD] StereoSet %s: %d items", path.name, len(items))
    return items


def write_stereoset(items: Sequence[StereoSetItem], path: Union[str, Path]) -> None:
    """Inverse of load_stereoset for token-joined text (used for synthetic suites)."""
    inverse = {v: k for k, v in GOLD_LABELS.items()}
    data: Dict[str, List] = {INTRASENTENCE: [], INTERSENTENCE: []}
    for n, it in enumerate(items):
        context = " ".join(it.context)
        sentences = []
        for label in OPTION_LABELS:
            if it.task == INTRASENTENCE:
                text = context.replace(BLANK, " ".join(it.options[label]), 1)
            else:
                text = " ".join(it.options[label])
            sentences.append({"id": f"{n}-{label}", "sentence": text, "gold_label": inverse[label]})
        data[it.task].append({
            "id": it.item_id or str(n), "target": "", "bias_type": it.category,
            "context": context, "sentences": sentences,
        })
    with open(path, "w", encoding="utf-8") as f:
        json.dump({"version": "synthetic", "data": data}, f, indent=1)


# =============================================================================
# CROWS-PAIRS
# =============================================================================

def load_crows_pairs(path: Union[str, Path], lowercase: bool = False) -> List[CrowsPair]:
    path = Path(path)
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    missing = [c for c in CROWS_COLUMNS if c not in df.columns]
    if missing:
        raise DatasetFormatError(f"{path.name}: missing columns {missing}")

    pairs: List[CrowsPair] = []
    for row_no, row in enumerate(df.itertuples(index=False), start=2):
        bias_type = getattr(row, "bias_type").strip()
        category = CROWS_CATEGORY_MAP.get(bias_type)
        if category is None:
            raise DatasetFormatError(f"{path.name} row {row_no}: unknown bias_type {bias_type!r}")
        if getattr(row, "stereo_antistereo").strip() not in ("stereo", "antistereo"):
            raise DatasetFormatError(f"{path.name} row {row_no}: stereo_antistereo must be 'stereo' or 'antistereo'")
        more = tokenize(getattr(row, "sent_more"), lowercase)
        less = tokenize(getattr(row, "sent_less"), lowercase)
        if not more or not less:
            raise DatasetFormatError(f"{path.name} row {row_no}: empty sentence")
        pairs.append(CrowsPair(category=category, sent_more=more, sent_less=less, pair_id=str(row_no)))
    logger.info("[LOAD] CrowS-Pairs %s: %d pairs", path.name, len(pairs))
    return pairs


def write_crows_pairs(pairs: Sequence[CrowsPair], path: Union[str, Path]) -> None:
    inverse = {v: k for k, v in CROWS_CATEGORY_MAP.items()}
    df = pd.DataFrame({
        "sent_more": [" ".join(p.sent_more) for p in pairs],
        "sent_less": [" ".join(p.sent_less) for p in pairs],
        "stereo_antistereo": ["stereo"] * len(pairs),
        "bias_type": [inverse[p.category] for p in pairs],
    })
    df.to_csv(path, index=False)


# =============================================================================
# WIKITEXT
# =============================================================================

def _is_heading(line: str) -> bool:
    s = line.strip()
    return s.startswith("=") and s.endswith("=")


def load_wikitext(path: Union[str, Path], fraction: float = WIKITEXT_FRACTION, seed: int = 0,
                  lowercase: bool = False) -> List[List[str]]:
    """Non-empty, non-heading lines as token lists; a seeded `fraction` of them, in file order."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    path = Path(path)
    with open(path, "r", encoding="utf-8") as f:
        lines = [ln for ln in f if ln.strip() and not _is_heading(ln)]
    if not lines:
        raise DatasetFormatError(f"{path.name}: no text lines")

    k = max(1, int(round(fraction * len(lines))))
    if k < len(lines):
        gen = RngStream(seed, (WIKITEXT_SUBSET_STREAM,)).generator()
        keep = sorted(int(i) for i in gen.choice(len(lines), size=k, replace=False))
        lines = [lines[i] for i in keep]
    corpus = [tokenize(ln, lowercase) for ln in lines]
    logger.info("[LOAD] WikiText %s: %d lines, %d tokens", path.name, len(corpus), sum(map(len, corpus)))
    return corpus


# =============================================================================
# SYNTHETIC SUITE
# =============================================================================

def synthetic_suite(per_category: int = SYNTH_PER_CATEGORY) -> Tuple[List[StereoSetItem], List[CrowsPair]]:
    """
    Every category gets `per_category` items per task. Options within an item
    have equal token length; CrowS pairs differ only in the group word.
    """
    items: List[StereoSetItem] = []
    for task in (INTRASENTENCE, INTERSENTENCE):
        for cat in STEREOSET_CATEGORIES:
            for i in range(per_category):
                noun = SYNTH_NOUNS[i % len(SYNTH_NOUNS)]
                if task == INTRASENTENCE:
                    context = ["the", cat, noun, "is", BLANK, "."]
                    options = {lab: [cue] for lab, cue in SYNTH_CUES.items()}
                else:
                    context = ["the", cat, noun, "arrived", "."]
                    options = {lab: ["they", "seemed", cue, "."] for lab, cue in SYNTH_CUES.items()}
                items.append(StereoSetItem(task=task, category=cat, context=context, options=options,
                                           item_id=f"{task}-{cat}-{i}"))

    pairs: List[CrowsPair] = []
    more_group, less_group = SYNTH_GROUPS
    for cat in CROWS_CATEGORIES:
        for i in range(per_category):
            noun = SYNTH_NOUNS[i % len(SYNTH_NOUNS)]
            tail = [noun + "s", "are", SYNTH_CUES[STEREO], "about", cat, "."]
            pairs.append(CrowsPair(category=cat, sent_more=["the", more_group] + tail,
                                   sent_less=["the", less_group] + tail, pair_id=f"{cat}-{i}"))
    return items, pairs


def synthetic_biased_mock() -> Dict:
    """Table-mock options that prefer every stereotypical option of the synthetic suite."""
    return {
        "kind": "table",
        "token_probs": {SYNTH_CUES[STEREO]: 0.5, SYNTH_CUES[ANTI]: 0.3, SYNTH_CUES[UNRELATED]: 0.2},
        "sentence_bonus": {SYNTH_GROUPS[0]: 1.0},
    }
