"""
calibration.py
──────────────
Plausible-deniability proxies for picking ε:

  N_w = how often M(w) returns w itself over repeated queries
  S_w = how many distinct words M(w) returns over the same queries

A usable ε leaves N_w positively skewed and S_w negatively skewed
across a random word subset. Outputs JSON, optional CSV per histogram and
one PNG chart per statistic.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy import stats
from tqdm import tqdm

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

import settings
from dp_mechanism import (
    STREAM_CALIBRATE,
    STREAM_SAMPLE_WORDS,
    PrivacyBudget,
    RngStream,
    sample_noise,
)
from embedding_store import EmbeddingStore, NearestIndex, nearest_exact

logger = logging.getLogger(__name__)

###############################################################################
# CONFIG
###############################################################################

# Laptop-sized defaults
DESK_SAMPLE_SIZE = 1000
DESK_QUERIES = 100

# Full protocol: 10000 random words queried 1000 times each
FULL_SAMPLE_SIZE = 10000
FULL_QUERIES = 1000
FULL_EPSILONS = (5.0, 10.0)

DEFAULT_BINS = 20

# Words handed to one worker task
WORDS_PER_TASK = 16

CHART_COLORS = ["#00AE6F", "#1F77B4", "#D62728", "#9467BD", "#FF7F0E", "#8C564B"]


###############################################################################
# ERRORS & TYPES
###############################################################################

class UndefinedSkewnessError(ValueError):
    """Skewness of a constant sample (or fewer than 3 values)."""


@dataclass
class DeniabilityStats:
    epsilon: PrivacyBudget
    sample_words: List[int]
    queries_per_word: int
    n_w: np.ndarray
    s_w: np.ndarray

    def values(self, which: str) -> np.ndarray:
        if which == "n_w":
            return self.n_w
        if which == "s_w":
            return self.s_w
        raise ValueError(f"which must be 'n_w' or 's_w', got {which!r}")


@dataclass
class HistogramData:
    bin_edges: List[float]
    counts: List[int]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "bin_left": self.bin_edges[:-1],
            "bin_right": self.bin_edges[1:],
            "count": self.counts,
        })


@dataclass
class SkewVerdict:
    status: str                       # "pass" | "fail" | "not-evaluable"
    skew_nw: Optional[float] = None
    skew_sw: Optional[float] = None
    diagnostics: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.status == "pass"


###############################################################################
# ESTIMATION
###############################################################################

def _estimate_words(store: EmbeddingStore, budget: PrivacyBudget, word_ids: Sequence[int],
                    queries: int, seed: int, index: Optional[NearestIndex]):
    n_w, s_w = [], []
    for w in word_ids:
        w = int(w)
        if budget.is_identity:
            n_w.append(queries)
            s_w.append(1)
            continue
        base = store.vectors[w]
        noisy = np.empty((queries, store.dimension))
        for q in range(queries):
            stream = RngStream(seed, (STREAM_CALIBRATE, w, q))
            noisy[q] = base + sample_noise(budget, store.dimension, stream).vector
        if index is None:
            out = np.array([nearest_exact(store, v, 1)[0].index for v in noisy])
        else:
            out = index.nearest_ids(noisy)
        n_w.append(int(np.sum(out == w)))
        s_w.append(int(np.unique(out).size))
    return n_w, s_w


def draw_sample_words(store: EmbeddingStore, sample_size: int, seed: int) -> List[int]:
    if sample_size < 1:
        raise ValueError(f"sample_size must be >= 1, got {sample_size}")
    if sample_size > len(store):
        raise ValueError(f"sample_size {sample_size} exceeds vocabulary size {len(store)}")
    gen = RngStream(seed, (STREAM_SAMPLE_WORDS,)).generator()
    return [int(i) for i in gen.choice(len(store), size=sample_size, replace=False)]


def estimate_deniability(store: EmbeddingStore, budget: PrivacyBudget, sample_size: int,
                         queries: int, seed: int, index: Optional[NearestIndex] = None,
                         parallelism: int = 1) -> DeniabilityStats:
    """
    Query M `queries` times for each of `sample_size` uniformly drawn words.
    The drawn subset depends only on the seed, so every ε sees the same words.
    """
    if queries < 1:
        raise ValueError(f"queries must be >= 1, got {queries}")
    words = draw_sample_words(store, sample_size, seed)
    chunks = [words[i:i + WORDS_PER_TASK] for i in range(0, len(words), WORDS_PER_TASK)]

    logger.info("[CALIBRATE] eps=%s: %d words x %d queries", budget.label, len(words), queries)
    tasks = (delayed(_estimate_words)(store, budget, chunk, queries, seed, index) for chunk in
             tqdm(chunks, desc=f"calibrate eps={budget.label}", disable=not settings.SHOW_PROGRESS))
    results = Parallel(n_jobs=max(1, parallelism), prefer="threads")(tasks)

    n_w = np.array([v for part in results for v in part[0]], dtype=np.int64)
    s_w = np.array([v for part in results for v in part[1]], dtype=np.int64)
    return DeniabilityStats(epsilon=budget, sample_words=words, queries_per_word=queries, n_w=n_w, s_w=s_w)


###############################################################################
# SUMMARY STATISTICS
###############################################################################

def skewness(values: Sequence[float]) -> float:
    """Fisher-Pearson g1 = m3 / m2^(3/2), population moments."""
    x = np.asarray(values, dtype=np.float64)
    if x.size < 3:
        raise UndefinedSkewnessError(f"skewness needs at least 3 values, got {x.size}")
    if np.ptp(x) == 0:
        raise UndefinedSkewnessError("skewness is undefined for a constant sample")
    return float(stats.skew(x, bias=True))


def histogram(dstats: DeniabilityStats, which: str, bins: int = DEFAULT_BINS) -> HistogramData:
    """Equal-width bins over [min, max]; the right-most bin is closed."""
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    counts, edges = np.histogram(dstats.values(which), bins=bins)
    return HistogramData(bin_edges=[float(e) for e in edges], counts=[int(c) for c in counts])


def check_skew_criterion(dstats: DeniabilityStats) -> SkewVerdict:
    try:
        g_n = skewness(dstats.n_w)
        g_s = skewness(dstats.s_w)
    except UndefinedSkewnessError as e:
        return SkewVerdict(status="not-evaluable", diagnostics=[str(e)])

    notes = [f"skew(N_w) = {g_n:+.4f} (want > 0)", f"skew(S_w) = {g_s:+.4f} (want < 0)"]
    ok = g_n > 0 and g_s < 0
    if g_n <= 0:
        notes.append("N_w is not positively skewed")
    if g_s >= 0:
        notes.append("S_w is not negatively skewed")
    return SkewVerdict(status="pass" if ok else "fail", skew_nw=g_n, skew_sw=g_s, diagnostics=notes)


###############################################################################
# OUTPUT
###############################################################################

def summarize(dstats: DeniabilityStats, bins: int = DEFAULT_BINS) -> Dict:
    verdict = check_skew_criterion(dstats)
    return {
        "epsilon": dstats.epsilon.label,
        "sample_size": len(dstats.sample_words),
        "queries": dstats.queries_per_word,
        "sample_words": list(dstats.sample_words),
        "n_w": [int(v) for v in dstats.n_w],
        "s_w": [int(v) for v in dstats.s_w],
        "mean_nw": float(np.mean(dstats.n_w)),
        "mean_sw": float(np.mean(dstats.s_w)),
        "skew_nw": verdict.skew_nw,
        "skew_sw": verdict.skew_sw,
        "criterion": verdict.status,
        "diagnostics": verdict.diagnostics,
        "histograms": {
            which: {"bin_edges": h.bin_edges, "counts": h.counts}
            for which, h in ((w, histogram(dstats, w, bins)) for w in ("n_w", "s_w"))
        },
    }


def write_calibration(results: Sequence[DeniabilityStats], out_path: Path, bins: int = DEFAULT_BINS,
                      csv_dir: Optional[Path] = None, plot_dir: Optional[Path] = None) -> Dict:
    out_path = Path(out_path)
    doc = {s.epsilon.label: summarize(s, bins) for s in results}
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2)
    logger.info("[CALIBRATE] wrote %s", out_path)

    if csv_dir is not None:
        csv_dir = Path(csv_dir)
        csv_dir.mkdir(parents=True, exist_ok=True)
        for s in results:
            for which in ("n_w", "s_w"):
                path = csv_dir / f"hist_{which}_eps{s.epsilon.label}.csv"
                histogram(s, which, bins).to_frame().to_csv(path, index=False)
        logger.info("[CALIBRATE] histogram CSVs in %s", csv_dir)

    if plot_dir is not None:
        plot_dir = Path(plot_dir)
        plot_dir.mkdir(parents=True, exist_ok=True)
        for which in ("n_w", "s_w"):
            chart_histograms(results, which, plot_dir / f"{which}.png", bins)
        logger.info("[CALIBRATE] charts in %s", plot_dir)

    return doc


def _mpl_setup():
    plt.rcParams.update({
        "font.size": 8.3,
        "axes.titlesize": 10.2,
        "axes.labelsize": 8.0,
        "axes.edgecolor": "#D1D5DB",
        "axes.linewidth": 0.8,
        "grid.color": "#E5E7EB",
        "grid.linewidth": 0.8,
    })


def chart_histograms(results: Sequence[DeniabilityStats], which: str, out_png: Path,
                     bins: int = DEFAULT_BINS) -> None:
    """One overlaid histogram per ε for N_w or S_w."""
    _mpl_setup()
    title = {
        "n_w": "N_w: outputs identical to the queried word",
        "s_w": "S_w: distinct outputs per queried word",
    }[which]

    plt.figure(figsize=(6.5, 3.2))
    for i, s in enumerate(results):
        plt.hist(s.values(which), bins=bins, alpha=0.55, label=f"ε = {s.epsilon.label}",
                 color=CHART_COLORS[i % len(CHART_COLORS)])
    plt.title(title)
    plt.xlabel("count per word")
    plt.ylabel("words")
    plt.grid(True, axis="y", alpha=1.0)
    plt.legend()
    plt.tight_layout()
    plt.savefig(out_png, format="png", dpi=160)
    plt.close()
