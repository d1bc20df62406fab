"""Shared fixtures: tiny handmade corpora and a small synthetic corpus."""
from __future__ import annotations

import numpy as np
import pytest

from dedup_al.blocking import block_candidates
from dedup_al.corpus import Corpus, CorruptionConfig, Record, Schema, generate_synthetic
from dedup_al.preprocess import PairPipeline, default_taggers


@pytest.fixture(scope="session")
def book_schema() -> Schema:
    return Schema(("title", "category", "price"))


@pytest.fixture(scope="session")
def book_records(book_schema) -> Corpus:
    """Hand-written catalog sample: two duplicate clusters and two singletons."""
    rows = [
        ("b0", ("Xinhua Dictionary 4.0", "Medium-sized dictionary", "85.00"), "dict"),
        ("b1", ("Xinhua Dictionary 4", "Medium dictionary", "85"), "dict"),
        ("b2", ("Modern Chinese Dictionary", "Large dictionary", "120.00"), "modern"),
        ("b3", ("Modern Chinese Dict.", "Large dictionary", "120.00"), "modern"),
        ("b4", ("Pocket Atlas", "Reference atlas", "29.99"), "atlas"),
        ("b5", ("Gardening Almanac 2021", "Almanac", "19.99"), "almanac"),
    ]
    records = tuple(Record(id=r, values=v, cluster_id=c) for r, v, c in rows)
    return Corpus(schema=book_schema, records=records, has_truth=True)


@pytest.fixture(scope="session")
def small_synthetic() -> Corpus:
    return generate_synthetic(
        40,
        CorruptionConfig(typo_rate=0.3, field_drop_rate=0.1, abbreviation_rate=0.2,
                         numeric_reformat_rate=0.3, duplicates_per_entity=2, seed=11),
    )


@pytest.fixture(scope="session")
def small_pipeline(small_synthetic) -> PairPipeline:
    pairs = block_candidates(small_synthetic, bucket_cap=25)
    ids = [p.pair_id for p in pairs]
    pipeline = PairPipeline(small_synthetic, default_taggers(), max_len=64)
    pipeline.build_vocab(ids, min_count=1)
    pipeline.refit_tfidf(ids)
    return pipeline


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Print one verdict line per acceptance criterion after the run."""
    import sys

    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None) if module else None
    if results:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in results:
            terminalreporter.write_line(line)
