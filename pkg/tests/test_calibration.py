import json
import math

import numpy as np
import pytest
from scipy import stats

from calibration import (
    DeniabilityStats,
    UndefinedSkewnessError,
    check_skew_criterion,
    draw_sample_words,
    estimate_deniability,
    histogram,
    skewness,
    write_calibration,
)
from dp_mechanism import PrivacyBudget
from embedding_store import build_index, from_arrays


def _stats(n_w, s_w, queries=10):
    return DeniabilityStats(epsilon=PrivacyBudget(5.0), sample_words=list(range(len(n_w))),
                            queries_per_word=queries, n_w=np.array(n_w), s_w=np.array(s_w))


# ----------------------------------------------------------------------------
# skewness
# ----------------------------------------------------------------------------

def test_skewness_symmetric():
    assert skewness([1, 2, 3]) == pytest.approx(0.0, abs=1e-12)


def test_skewness_known_value():
    assert skewness([0, 0, 0, 1]) == pytest.approx(1.1547, abs=1e-4)


def test_skewness_negation():
    x = np.random.default_rng(1).exponential(size=50)
    assert skewness(-x) == pytest.approx(-skewness(x))


def test_skewness_constant_is_undefined():
    with pytest.raises(UndefinedSkewnessError):
        skewness([4, 4, 4, 4])
    with pytest.raises(UndefinedSkewnessError):
        skewness([1, 2])


# ----------------------------------------------------------------------------
# estimation
# ----------------------------------------------------------------------------

def test_identity_budget(random_store):
    d = estimate_deniability(random_store, PrivacyBudget(math.inf), 50, 20, seed=1)
    assert (d.n_w == 20).all()
    assert (d.s_w == 1).all()


def test_sample_larger_than_vocabulary(line_store):
    with pytest.raises(ValueError):
        estimate_deniability(line_store, PrivacyBudget(1.0), 4, 10, seed=0)


def test_sample_words_fixed_by_seed(random_store):
    assert draw_sample_words(random_store, 30, 7) == draw_sample_words(random_store, 30, 7)
    words = draw_sample_words(random_store, 30, 7)
    assert len(set(words)) == 30


def test_same_seed_same_stats(random_store):
    a = estimate_deniability(random_store, PrivacyBudget(3.0), 20, 15, seed=4)
    b = estimate_deniability(random_store, PrivacyBudget(3.0), 20, 15, seed=4, parallelism=4)
    np.testing.assert_array_equal(a.n_w, b.n_w)
    np.testing.assert_array_equal(a.s_w, b.s_w)
    assert a.sample_words == b.sample_words


def test_stat_invariants(random_store):
    index = build_index(random_store)
    d = estimate_deniability(random_store, PrivacyBudget(8.0), 40, 25, seed=2, index=index)
    assert ((0 <= d.n_w) & (d.n_w <= 25)).all()
    assert ((1 <= d.s_w) & (d.s_w <= 25)).all()
    assert ((d.n_w == 25) == (d.s_w == 1)).all()


def test_far_pair_never_moves(pair_store):
    d = estimate_deniability(pair_store, PrivacyBudget(5.0), 2, 500, seed=3)
    assert (d.n_w == 500).all()


def test_means_move_with_epsilon():
    gen = np.random.default_rng(21)
    store = from_arrays([f"w{i}" for i in range(2000)], gen.uniform(0, 10, size=(2000, 5)))
    index = build_index(store)
    runs = [estimate_deniability(store, PrivacyBudget(e), 200, 50, seed=5, index=index)
            for e in (1.0, 5.0, 10.0, 50.0)]
    for lo, hi in zip(runs, runs[1:]):
        assert hi.n_w.mean() > lo.n_w.mean()
        assert hi.s_w.mean() < lo.s_w.mean()
        assert stats.mannwhitneyu(hi.n_w, lo.n_w, alternative="greater").pvalue < 0.01
        assert stats.mannwhitneyu(hi.s_w, lo.s_w, alternative="less").pvalue < 0.01


# ----------------------------------------------------------------------------
# histograms and the criterion
# ----------------------------------------------------------------------------

def test_histogram_counts_partition_sample(random_store):
    d = estimate_deniability(random_store, PrivacyBudget(6.0), 60, 10, seed=8)
    for which in ("n_w", "s_w"):
        h = histogram(d, which, bins=7)
        assert sum(h.counts) == 60
        assert all(a < b for a, b in zip(h.bin_edges, h.bin_edges[1:]))


def test_histogram_identity_single_bin(random_store):
    d = estimate_deniability(random_store, PrivacyBudget(math.inf), 30, 12, seed=8)
    h = histogram(d, "n_w", bins=5)
    assert sum(1 for c in h.counts if c) == 1
    assert h.bin_edges[0] <= 12 <= h.bin_edges[-1]


def test_histogram_rejects_unknown_stat(random_store):
    d = _stats([1, 2, 3], [3, 2, 1])
    with pytest.raises(ValueError):
        histogram(d, "x_w")


def test_identity_is_not_evaluable(random_store):
    d = estimate_deniability(random_store, PrivacyBudget(math.inf), 10, 5, seed=0)
    v = check_skew_criterion(d)
    assert v.status == "not-evaluable"
    assert v.diagnostics


def test_mirrored_stats_fail():
    v = check_skew_criterion(_stats([10, 10, 10, 9, 0], [1, 1, 1, 2, 10]))
    assert v.status == "fail"
    assert v.skew_nw < 0 < v.skew_sw


def test_clustered_store_passes(clustered_store):
    d = estimate_deniability(clustered_store, PrivacyBudget(5.0), len(clustered_store), 100, seed=13)
    v = check_skew_criterion(d)
    assert v.passed, v.diagnostics


def test_write_calibration(tmp_path, random_store):
    runs = [estimate_deniability(random_store, PrivacyBudget(e), 25, 10, seed=1) for e in (5.0, 10.0)]
    doc = write_calibration(runs, tmp_path / "calib.json", bins=5,
                            csv_dir=tmp_path / "csv", plot_dir=tmp_path / "png")
    on_disk = json.loads((tmp_path / "calib.json").read_text(encoding="utf-8"))
    assert on_disk == doc
    assert set(doc) == {"5", "10"}
    for key in ("n_w", "s_w", "skew_nw", "skew_sw", "histograms"):
        assert key in doc["5"]
    assert len(doc["10"]["n_w"]) == 25
    assert (tmp_path / "csv" / "hist_n_w_eps5.csv").is_file()
    assert (tmp_path / "png" / "s_w.png").is_file()
