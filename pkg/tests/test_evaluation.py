"""Metrics, splits, baselines, round reports."""
from __future__ import annotations

import itertools

import numpy as np
import pytest

from dedup_al.blocking import block_candidates
from dedup_al.corpus import CorruptionConfig, generate_synthetic
from dedup_al.evaluation import (
    ConfusionCounts,
    Metrics,
    RoundReport,
    cluster_split,
    confusion_from_predictions,
    f1_score,
    field_similarity,
    field_similarity_baseline,
    levenshtein,
    metrics,
    pair_truth,
    read_reports_json,
    split_pairs,
    write_reports_json,
)


def test_f1_identity_benchmark_row():
    assert f1_score(0.9583, 0.9917) == pytest.approx(0.9747, abs=1e-4)


def test_metrics_matches_direct_formula():
    m = metrics(ConfusionCounts(tp=23, fp=1, fn=4, tn=100))
    assert m.precision == pytest.approx(23 / 24)
    assert m.recall == pytest.approx(23 / 27)
    assert m.f1 == pytest.approx(2 * m.precision * m.recall / (m.precision + m.recall))
    assert m.zero_division == ()


def test_metrics_zero_division_flags():
    no_predictions = metrics(ConfusionCounts(tp=0, fp=0, fn=5, tn=5))
    assert no_predictions.precision == 0.0
    assert "precision" in no_predictions.zero_division
    no_positives = metrics(ConfusionCounts(tp=0, fp=5, fn=0, tn=5))
    assert "recall" in no_positives.zero_division
    nothing = metrics(ConfusionCounts(tp=0, fp=0, fn=0, tn=9))
    assert nothing.zero_division == ("precision", "recall", "f1")
    assert nothing.f1 == 0.0


def test_confusion_counts_validation():
    with pytest.raises(ValueError):
        ConfusionCounts(tp=-1, fp=0, fn=0, tn=0)
    assert ConfusionCounts(tp=1, fp=2, fn=3, tn=4).total == 10


def test_levenshtein_known_values():
    assert levenshtein("kitten", "sitting") == 3
    assert levenshtein("", "abc") == 3
    assert levenshtein("abc", "abc") == 0
    assert levenshtein("ab", "ba") == 2


def test_levenshtein_brute_force_oracle(rng):
    """Compare against a memoized recursive definition on short strings."""
    import functools

    def slow(a: str, b: str) -> int:
        @functools.lru_cache(maxsize=None)
        def rec(i, j):
            if i == 0:
                return j
            if j == 0:
                return i
            return min(rec(i - 1, j) + 1, rec(i, j - 1) + 1,
                       rec(i - 1, j - 1) + (a[i - 1] != b[j - 1]))
        return rec(len(a), len(b))

    alphabet = "abc"
    for _ in range(200):
        a = "".join(rng.choice(list(alphabet), size=rng.integers(0, 7)))
        b = "".join(rng.choice(list(alphabet), size=rng.integers(0, 7)))
        assert levenshtein(a, b) == slow(a, b)


def test_field_similarity_bounds():
    assert field_similarity("", "") == 1.0
    assert field_similarity("abc", "abc") == 1.0
    assert field_similarity("abc", "xyz") == 0.0
    assert 0.0 < field_similarity("abcd", "abce") < 1.0


def test_field_similarity_baseline(book_records):
    pairs = block_candidates(book_records)
    verdicts = field_similarity_baseline(pairs, book_records, "title", threshold=0.8)
    assert set(verdicts) == {p.pair_id for p in pairs}
    with pytest.raises(ValueError):
        field_similarity_baseline(pairs, book_records, "publisher", threshold=0.5)


def test_pair_truth(book_records):
    assert pair_truth(book_records, "b0|b1") == 1
    assert pair_truth(book_records, "b1|b2") == 0


def test_cluster_split_partitions_clusters(small_synthetic):
    split = cluster_split(small_synthetic, seed=3)
    parts = [split.train, split.validation, split.test]
    assert sum(len(p) for p in parts) == len(small_synthetic.clusters())
    for a, b in itertools.combinations(parts, 2):
        assert not (a & b)
    total = len(small_synthetic.clusters())
    assert len(split.train) == round(0.6 * total)
    assert len(split.validation) == round(0.2 * total)


def test_cluster_split_deterministic(small_synthetic):
    assert cluster_split(small_synthetic, seed=5) == cluster_split(small_synthetic, seed=5)
    assert cluster_split(small_synthetic, seed=5) != cluster_split(small_synthetic, seed=6)


def test_cluster_split_validates_ratios(small_synthetic):
    with pytest.raises(ValueError):
        cluster_split(small_synthetic, ratios=(0.5, 0.2, 0.2))
    with pytest.raises(ValueError):
        cluster_split(small_synthetic, ratios=(1.2, -0.1, -0.1))


def test_split_pairs_drops_straddlers(small_synthetic):
    pairs = block_candidates(small_synthetic, bucket_cap=25)
    split = cluster_split(small_synthetic, seed=3)
    ps = split_pairs(pairs, small_synthetic, split)
    assigned = len(ps.train) + len(ps.validation) + len(ps.test)
    assert assigned <= len(pairs)

    def cluster_of(rid):
        return small_synthetic.by_id(rid).cluster_id

    for bucket, clusters in (("train", split.train), ("validation", split.validation),
                             ("test", split.test)):
        for pair in getattr(ps, bucket):
            assert cluster_of(pair.left_id) in clusters
            assert cluster_of(pair.right_id) in clusters
    # every unassigned pair genuinely straddles two splits
    kept = {p.pair_id for bucket in (ps.train, ps.validation, ps.test) for p in bucket}
    names = (("train", split.train), ("validation", split.validation),
             ("test", split.test))
    for pair in pairs:
        if pair.pair_id not in kept:
            left = next(n for n, cl in names if cluster_of(pair.left_id) in cl)
            right = next(n for n, cl in names if cluster_of(pair.right_id) in cl)
            assert left != right


def test_confusion_from_predictions_brute_force(rng):
    probs = {f"p{i}": float(rng.random()) for i in range(500)}
    truth = {pid: int(rng.integers(0, 2)) for pid in probs}
    cm = confusion_from_predictions(probs, truth, threshold=0.5)
    tp = sum(1 for pid in probs if probs[pid] >= 0.5 and truth[pid])
    fp = sum(1 for pid in probs if probs[pid] >= 0.5 and not truth[pid])
    fn = sum(1 for pid in probs if probs[pid] < 0.5 and truth[pid])
    assert (cm.tp, cm.fp, cm.fn) == (tp, fp, fn)
    assert cm.total == 500
    # threshold is inclusive
    cm2 = confusion_from_predictions({"a": 0.5}, {"a": 1}, threshold=0.5)
    assert cm2.tp == 1


def test_round_report_json_round_trip(tmp_path):
    reports = [
        RoundReport(round_index=1, strategy="uncertainty", precision=0.9,
                    recall=0.8, f1=f1_score(0.9, 0.8), zero_division=(),
                    selected=("a|b", "c|d"), labeled_count=60, unlabeled_count=440),
        RoundReport(round_index=2, strategy="uncertainty", precision=0.0,
                    recall=0.0, f1=0.0, zero_division=("precision", "f1"),
                    selected=(), labeled_count=110, unlabeled_count=390),
    ]
    path = tmp_path / "reports.json"
    write_reports_json(reports, path)
    assert read_reports_json(path) == reports


def test_blocking_recall_on_synthetic(small_synthetic):
    """Shared-token blocking finds nearly every true pair in a corrupted corpus."""
    pairs = block_candidates(small_synthetic)
    true_found = sum(pair_truth(small_synthetic, p.pair_id) for p in pairs)
    from dedup_al.corpus import true_pair_count
    assert true_found >= 0.95 * true_pair_count(small_synthetic)
