"""Corpus model, CSV ingestion round-trip, and synthetic generator invariants."""
from __future__ import annotations

import numpy as np
import pytest

from dedup_al.blocking import text_tokens
from dedup_al.corpus import (
    Corpus,
    CorruptionConfig,
    IngestError,
    Record,
    Schema,
    export_csv,
    generate_synthetic,
    load_csv,
    true_pair_count,
)


def test_schema_rejects_duplicates_and_empty():
    with pytest.raises(ValueError):
        Schema(())
    with pytest.raises(ValueError):
        Schema(("a", "a"))


def test_corpus_rejects_mismatched_record(book_schema):
    with pytest.raises(ValueError):
        Corpus(schema=book_schema, records=(Record("r0", ("only one",)),))


def test_corpus_rejects_duplicate_ids(book_schema):
    rec = Record("r0", ("a", "b", "c"))
    with pytest.raises(ValueError):
        Corpus(schema=book_schema, records=(rec, rec))


def test_truth_corpus_requires_cluster_ids(book_schema):
    with pytest.raises(ValueError):
        Corpus(schema=book_schema, records=(Record("r0", ("a", "b", "c")),), has_truth=True)


def test_accessors(book_records):
    assert book_records.value("b0", "price") == "85.00"
    assert book_records.display("b4") == {
        "title": "Pocket Atlas", "category": "Reference atlas", "price": "29.99",
    }
    assert book_records.by_id("b2").cluster_id == "modern"
    assert sorted(book_records.clusters()["dict"]) == ["b0", "b1"]


def test_true_pair_count(book_records):
    # two clusters of 2, two singletons
    assert true_pair_count(book_records) == 2


def test_csv_round_trip(tmp_path, book_records):
    path = tmp_path / "books.csv"
    export_csv(book_records, path)
    loaded = load_csv(path, id_column="id", truth_column="cluster_id")
    assert loaded == book_records


def test_csv_rejects_pipe_in_id(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("id,name\na|b,whatever\n", encoding="utf-8")
    with pytest.raises(IngestError, match=r"\|"):
        load_csv(path, id_column="id")


def test_csv_rejects_duplicate_id(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("id,name\nr1,x\nr1,y\n", encoding="utf-8")
    with pytest.raises(IngestError, match="duplicate"):
        load_csv(path, id_column="id")


def test_csv_rejects_ragged_row(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("id,name\nr1,x,extra\n", encoding="utf-8")
    with pytest.raises(IngestError, match="columns"):
        load_csv(path, id_column="id")


def test_csv_without_truth_column(tmp_path, book_records):
    path = tmp_path / "books.csv"
    export_csv(book_records, path)
    loaded = load_csv(path, id_column="id")
    assert not loaded.has_truth
    assert "cluster_id" in loaded.schema.attributes  # rides along as a plain column


# ---------------------------------------------------------------------------
# Synthetic generator


def test_generate_counts_and_clusters():
    corpus = generate_synthetic(25, CorruptionConfig(duplicates_per_entity=2, seed=3))
    assert len(corpus) == 25 * 3
    clusters = corpus.clusters()
    assert len(clusters) == 25
    assert all(len(members) == 3 for members in clusters.values())
    assert true_pair_count(corpus) == 25 * 3


def test_generate_deterministic():
    cfg = CorruptionConfig(typo_rate=0.3, field_drop_rate=0.1, abbreviation_rate=0.2,
                           numeric_reformat_rate=0.3, duplicates_per_entity=2, seed=42)
    assert generate_synthetic(30, cfg) == generate_synthetic(30, cfg)


def test_generate_zero_rates_copies_are_clean():
    corpus = generate_synthetic(20, CorruptionConfig(duplicates_per_entity=2, seed=5))
    for members in corpus.clusters().values():
        rows = [corpus.by_id(rid).values for rid in members]
        assert all(row == rows[0] for row in rows[1:])


def test_generate_corruption_changes_some_copies():
    cfg = CorruptionConfig(typo_rate=1.0, duplicates_per_entity=1, seed=5)
    corpus = generate_synthetic(20, cfg)
    changed = 0
    for members in corpus.clusters().values():
        rows = {corpus.by_id(rid).values for rid in members}
        changed += len(rows) > 1
    assert changed >= 15  # typo_rate=1 must touch nearly every copy


def test_signature_separation():
    """Entities sharing a title token (the blocking keys: closed-field buckets
    exceed any sane cap) differ in >= 2 of brand/category/series, so no
    candidate negative is field-identical."""
    corpus = generate_synthetic(120, CorruptionConfig(duplicates_per_entity=2, seed=9))
    schema = corpus.schema.attributes
    sig_idx = [schema.index(a) for a in ("brand", "category", "series")]
    title_idx = schema.index("title")
    clean = [rec for rec in corpus.records if rec.id.endswith("-0")]
    toks = {rec.id: set(text_tokens(rec.values[title_idx])) for rec in clean}
    for i, left in enumerate(clean):
        for right in clean[i + 1:]:
            if not toks[left.id] & toks[right.id]:
                continue
            disagreements = sum(left.values[k] != right.values[k] for k in sig_idx)
            assert disagreements >= 2, (left.id, right.id)


def test_title_tokens_survive_corruption_tokenization():
    corpus = generate_synthetic(15, CorruptionConfig(typo_rate=1.0, abbreviation_rate=1.0,
                                                     duplicates_per_entity=1, seed=2))
    for rec in corpus.records:
        title = rec.values[corpus.schema.attributes.index("title")]
        assert all(tok == tok.casefold() for tok in text_tokens(title))


def test_corruption_config_validates():
    with pytest.raises(ValueError):
        CorruptionConfig(typo_rate=1.5)
    with pytest.raises(ValueError):
        CorruptionConfig(duplicates_per_entity=-1)
    with pytest.raises(ValueError):
        generate_synthetic(0, CorruptionConfig())


def test_price_values_come_from_the_tier_menu():
    corpus = generate_synthetic(30, CorruptionConfig(numeric_reformat_rate=1.0,
                                                     duplicates_per_entity=2, seed=7))
    idx = corpus.schema.attributes.index("price")
    allowed = {"9.99", "19.99", "29.99", "49.99", "85.00", "120.00", "199.00", "349.00",
               "9", "19", "29", "49", "85", "120", "199", "349", ""}
    assert {rec.values[idx] for rec in corpus.records} <= allowed
