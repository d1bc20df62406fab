"""Blocking: inverted-index candidates must equal brute-force shared-token pairs."""
from __future__ import annotations

import numpy as np
import pytest

from dedup_al.blocking import (
    DEFAULT_STOPWORDS,
    CandidatePair,
    block_candidates,
    export_pairs_csv,
    record_tokens,
    text_tokens,
)
from dedup_al.corpus import Corpus, Record, Schema


def brute_force_pairs(corpus, stopwords):
    """Quadratic oracle: every unordered pair sharing a non-stopword token."""
    toks = record_tokens(corpus, stopwords)
    ids = sorted(toks)
    out = set()
    for i, a in enumerate(ids):
        for b in ids[i + 1:]:
            if toks[a] & toks[b]:
                out.add(CandidatePair.of(a, b))
    return out


def random_corpus(rng, n_records, vocab_size=30) -> Corpus:
    words = [f"w{k}" for k in range(vocab_size)]
    records = []
    for i in range(n_records):
        n = int(rng.integers(1, 6))
        picks = rng.choice(vocab_size, size=n, replace=False)
        text = " ".join(words[k] for k in picks)
        records.append(Record(id=f"r{i:03d}", values=(text,)))
    return Corpus(schema=Schema(("text",)), records=tuple(records))


def test_candidates_equal_brute_force_on_random_corpora(rng):
    for trial in range(20):
        corpus = random_corpus(rng, int(rng.integers(2, 201)))
        got = set(block_candidates(corpus, stopwords=frozenset(), bucket_cap=10**9))
        want = brute_force_pairs(corpus, frozenset())
        assert got == want, f"trial {trial}"


def test_candidates_equal_brute_force_with_stopwords(rng):
    stop = frozenset({"w0", "w1", "w2"})
    for trial in range(5):
        corpus = random_corpus(rng, 80)
        got = set(block_candidates(corpus, stopwords=stop, bucket_cap=10**9))
        assert got == brute_force_pairs(corpus, stop), f"trial {trial}"


def test_bucket_cap_skips_giant_buckets():
    records = tuple(
        Record(id=f"r{i}", values=(f"common uniq{i // 2}",)) for i in range(10)
    )
    corpus = Corpus(schema=Schema(("text",)), records=records)
    capped = block_candidates(corpus, stopwords=frozenset(), bucket_cap=5)
    # "common" (bucket 10) is skipped; only the uniq buckets of 2 remain
    assert capped == [CandidatePair.of(f"r{2*k}", f"r{2*k+1}") for k in range(5)]
    full = block_candidates(corpus, stopwords=frozenset(), bucket_cap=10)
    assert len(full) == 45


def test_output_sorted_and_unique(small_synthetic):
    pairs = block_candidates(small_synthetic, bucket_cap=25)
    ids = [p.pair_id for p in pairs]
    assert ids == sorted(ids)
    assert len(ids) == len(set(ids))


def test_pair_id_round_trip():
    pair = CandidatePair.of("zeta", "alpha")
    assert pair.pair_id == "alpha|zeta"
    assert CandidatePair.from_pair_id("alpha|zeta") == pair
    with pytest.raises(ValueError):
        CandidatePair.of("same", "same")
    with pytest.raises(ValueError):
        CandidatePair("b", "a")


def test_text_tokens_casefold_and_versions():
    assert text_tokens("Xinhua Dictionary 4.0") == ["xinhua", "dictionary", "4.0"]
    assert text_tokens("price: 85.00!") == ["price", "85.00"]
    assert text_tokens("") == []


def test_empty_corpus_rejected():
    with pytest.raises(ValueError):
        block_candidates(Corpus(schema=Schema(("a",)), records=()))


def test_export_pairs_csv(tmp_path):
    pairs = [CandidatePair.of("a", "b"), CandidatePair.of("a", "c")]
    path = tmp_path / "pairs.csv"
    export_pairs_csv(pairs, path)
    assert path.read_text(encoding="utf-8").splitlines() == [
        "left_id,right_id", "a,b", "a,c",
    ]


def test_stopwords_do_not_block(book_records):
    pairs = block_candidates(book_records, stopwords=DEFAULT_STOPWORDS)
    # b4 shares no content token with b5
    assert CandidatePair.of("b4", "b5") not in pairs
    assert CandidatePair.of("b0", "b1") in pairs
