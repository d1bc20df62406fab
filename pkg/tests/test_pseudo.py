"""Self-supervised pseudo-pairs: determinism, truth-blindness, label semantics."""
from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from dedup_al.corpus import Corpus, Record, Schema
from dedup_al.pseudo import (
    build_pseudo_pairs,
    categorical_attributes,
    clearly_distinct,
    is_numeric_value,
    noised_view,
    pseudo_examples,
)


@pytest.fixture(scope="module")
def record_ids(small_synthetic):
    return [rec.id for rec in small_synthetic.records]


def source_index(record_id: str) -> int:
    """Pseudo record ids are ps<i>a / ps<i>b where i indexes the sorted inputs."""
    assert record_id.startswith("ps") and record_id[-1] in "ab"
    return int(record_id[2:-1])


# -- raw ingredients ---------------------------------------------------------


def test_is_numeric_value():
    assert is_numeric_value("85.00")
    assert is_numeric_value("120")
    assert is_numeric_value("12 34.5")
    assert not is_numeric_value("4.0 dictionary")
    assert not is_numeric_value("")
    assert not is_numeric_value("v2")


def test_categorical_attributes_pick_closed_nonnumeric_fields(small_synthetic):
    cats = categorical_attributes(small_synthetic)
    assert "brand" in cats and "category" in cats and "series" in cats
    assert "title" not in cats  # open vocabulary
    assert "price" not in cats  # numeric


def test_noised_view_only_applies_allowed_damage(small_synthetic):
    cats = categorical_attributes(small_synthetic)
    attrs = small_synthetic.schema.attributes
    rng = np.random.default_rng(7)
    for rec in small_synthetic.records[:60]:
        original = dict(zip(attrs, rec.values))
        view = noised_view(original, cats, rng)
        for attr in attrs:
            before, after = original[attr], view[attr]
            if after == before:
                continue
            if attr in cats:
                # blanked, or one character doubled
                assert after == "" or (len(after) == len(before) + 1
                                       and set(after) == set(before))
            elif is_numeric_value(before):
                assert after in (before.split(".", 1)[0], f"{before}.00")
            else:
                # one word dropped from free text
                assert len(after.split()) == len(before.split()) - 1
                assert set(after.split()) <= set(before.split())


def test_clearly_distinct_needs_two_disagreements():
    cats = ("brand", "category")
    a = {"brand": "acme", "category": "widget"}
    assert not clearly_distinct(a, {"brand": "acme", "category": "widget"}, cats)
    assert not clearly_distinct(a, {"brand": "zorg", "category": "widget"}, cats)
    assert not clearly_distinct(a, {"brand": "", "category": "gadget"}, cats)
    assert clearly_distinct(a, {"brand": "zorg", "category": "gadget"}, cats)
    # with a single categorical field, one disagreement is enough
    assert clearly_distinct({"brand": "acme"}, {"brand": "zorg"}, ("brand",))


# -- pair construction -------------------------------------------------------


def test_build_is_deterministic(small_synthetic, record_ids):
    one = build_pseudo_pairs(small_synthetic, record_ids, seed=5)
    two = build_pseudo_pairs(small_synthetic, record_ids, seed=5)
    assert [(p.pair_id, p.label) for p in one] == [(p.pair_id, p.label) for p in two]
    assert [(p.left, p.right) for p in one] == [(p.left, p.right) for p in two]
    other = build_pseudo_pairs(small_synthetic, record_ids, seed=6)
    assert [(p.pair_id, p.label) for p in one] != [(p.pair_id, p.label) for p in other]


def test_reads_record_content_never_cluster_ids(small_synthetic, record_ids):
    scrambled = Corpus(
        schema=small_synthetic.schema,
        records=tuple(dataclasses.replace(rec, cluster_id=f"z{i % 5}")
                      for i, rec in enumerate(small_synthetic.records)),
        has_truth=True,
    )
    honest = build_pseudo_pairs(small_synthetic, record_ids, seed=3)
    blind = build_pseudo_pairs(scrambled, record_ids, seed=3)
    assert [(p.pair_id, p.label, p.left.values, p.right.values) for p in honest] == \
           [(p.pair_id, p.label, p.left.values, p.right.values) for p in blind]


def test_positives_pair_a_record_with_its_own_noised_view(small_synthetic, record_ids):
    ordered = sorted(record_ids)
    attrs = small_synthetic.schema.attributes
    cats = categorical_attributes(small_synthetic)
    for pair in build_pseudo_pairs(small_synthetic, record_ids, seed=1):
        if pair.label != 1:
            continue
        li, ri = source_index(pair.left.id), source_index(pair.right.id)
        assert li == ri
        source = dict(zip(attrs, small_synthetic.by_id(ordered[li]).values))
        # neither view may disagree with the source on a clean categorical value
        for view in (pair.left, pair.right):
            vals = dict(zip(attrs, view.values))
            assert not clearly_distinct(vals, source, cats)


def test_negatives_disagree_on_two_categorical_fields(small_synthetic, record_ids):
    ordered = sorted(record_ids)
    attrs = small_synthetic.schema.attributes
    cats = categorical_attributes(small_synthetic)
    negatives = [p for p in build_pseudo_pairs(small_synthetic, record_ids, seed=1)
                 if p.label == 0]
    assert negatives
    for pair in negatives:
        li, ri = source_index(pair.left.id), source_index(pair.right.id)
        assert li != ri
        a = dict(zip(attrs, small_synthetic.by_id(ordered[li]).values))
        b = dict(zip(attrs, small_synthetic.by_id(ordered[ri]).values))
        assert clearly_distinct(a, b, cats)


def test_roughly_balanced_and_canonical_ids(small_synthetic, record_ids):
    pairs = build_pseudo_pairs(small_synthetic, record_ids, seed=2)
    n_pos = sum(p.label for p in pairs)
    n_neg = len(pairs) - n_pos
    assert n_pos == len(record_ids)  # one positive per record
    assert n_neg >= 0.5 * len(record_ids)  # most records find a distinct partner
    for p in pairs:
        assert p.pair_id == "|".join(sorted((p.left.id, p.right.id)))


def test_subset_of_records_is_honored(small_synthetic, record_ids):
    subset = sorted(record_ids)[:10]
    pairs = build_pseudo_pairs(small_synthetic, subset, seed=0)
    assert sum(p.label for p in pairs) == len(subset)
    indices = {source_index(rid) for p in pairs for rid in (p.left.id, p.right.id)}
    assert indices <= set(range(len(subset)))


def test_no_categorical_fields_yields_positives_only():
    schema = Schema(("note",))
    records = tuple(Record(id=f"r{i}", values=(f"free text number {i} here",))
                    for i in range(12))
    corpus = Corpus(schema=schema, records=records)
    pairs = build_pseudo_pairs(corpus, [r.id for r in records], seed=0)
    assert pairs and all(p.label == 1 for p in pairs)


# -- encoding ----------------------------------------------------------------


def test_examples_encode_through_the_fitted_pipeline(small_synthetic, small_pipeline,
                                                     record_ids):
    examples = pseudo_examples(small_synthetic, record_ids[:20], small_pipeline, seed=4)
    assert examples
    vocab_size = len(small_pipeline.vocab)
    for ex in examples:
        assert ex.label in (0, 1)
        assert ex.seq.ids.shape == (small_pipeline.max_len,)
        assert 0 < ex.seq.length <= small_pipeline.max_len
        assert int(ex.seq.ids.max()) < vocab_size


def test_examples_require_a_fitted_pipeline(small_synthetic, record_ids):
    from dedup_al.preprocess import PairPipeline, default_taggers

    unfitted = PairPipeline(small_synthetic, default_taggers(), max_len=64)
    with pytest.raises(RuntimeError):
        pseudo_examples(small_synthetic, record_ids[:4], unfitted, seed=0)
