"""Self-supervised pseudo-pairs: consistency training data built from record
content alone.

Labeled pairs are scarce (tens per round), far too few for a from-scratch
encoder to learn field-comparison behaviour instead of memorizing token
patterns. This module manufactures unlimited extra training pairs without
touching any ground truth:

- a *positive* pairs a record with an independently noised view of itself
  (field blanking, word drops, numeric reformatting, character typos — the
  same kinds of damage real duplicates carry);
- a *negative* pairs two records that clearly disagree on at least two
  categorical attributes, which no amount of single-field noise explains.

Mixing a few of these per real label into each training round teaches the
encoder what "same entity, corrupted differently" looks like while the real
labels anchor the decision boundary.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, Record, Schema
from .preprocess import (DEFAULT_STOPWORDS, PairPipeline, SerializedPair,
                         inject_knowledge, serialize_pair, summarize, tokenize)
from .training import LabeledExample

logger = logging.getLogger(__name__)

_BLANK_RATE = 0.12       # blank one categorical value
_WORD_DROP_RATE = 0.25   # drop one word from a multi-word value
_REFORMAT_RATE = 0.30    # toggle "85.00" <-> "85" on numeric values
_TYPO_RATE = 0.10        # double one character of one categorical value
_PARTNER_TRIES = 50      # attempts to find a clearly-distinct partner


def is_numeric_value(value: str) -> bool:
    tokens = value.split()
    return bool(tokens) and all(
        tok.replace(".", "", 1).isdigit() for tok in tokens
    )


def categorical_attributes(corpus: Corpus) -> tuple[str, ...]:
    """Attributes whose non-blank values form a small closed set.

    Closed-set fields (brands, categories, series codes) are the reliable
    entity separators; free text and numeric fields are excluded because
    noise routinely rewrites them on true duplicates.
    """
    threshold = max(8, len(corpus.records) // 20)
    names: list[str] = []
    for i, attr in enumerate(corpus.schema.attributes):
        values = {rec.values[i] for rec in corpus.records if rec.values[i]}
        if not values or len(values) > threshold:
            continue
        if all(is_numeric_value(v) for v in values):
            continue
        names.append(attr)
    return tuple(names)


def noised_view(values: dict[str, str], categorical: tuple[str, ...],
                rng: np.random.Generator) -> dict[str, str]:
    """One plausibly-corrupted copy of a record's values."""
    out = dict(values)
    for attr in categorical:
        if out[attr] and rng.random() < _BLANK_RATE:
            out[attr] = ""
    for attr, value in out.items():
        words = value.split()
        if len(words) > 1 and attr not in categorical and rng.random() < _WORD_DROP_RATE:
            words.pop(int(rng.integers(len(words))))
            out[attr] = " ".join(words)
    for attr, value in out.items():
        if value and is_numeric_value(value) and rng.random() < _REFORMAT_RATE:
            if "." in value:
                out[attr] = value.split(".", 1)[0] or value
            elif value.isdigit():
                out[attr] = f"{value}.00"
    if categorical and rng.random() < _TYPO_RATE:
        attr = categorical[int(rng.integers(len(categorical)))]
        tok = out[attr]
        if len(tok) >= 2:
            i = int(rng.integers(len(tok)))
            out[attr] = tok[:i] + tok[i] + tok[i:]  # double one character
    return out


def clearly_distinct(a: dict[str, str], b: dict[str, str],
                     categorical: tuple[str, ...]) -> bool:
    """True when the two records disagree on enough closed-set fields that
    no single-field data-entry accident can explain it."""
    needed = 2 if len(categorical) >= 2 else 1
    disagreements = sum(
        1 for attr in categorical if a[attr] and b[attr] and a[attr] != b[attr]
    )
    return disagreements >= needed


@dataclass(frozen=True)
class PseudoPair:
    pair_id: str
    left: Record
    right: Record
    label: int


def build_pseudo_pairs(corpus: Corpus, record_ids: list[str],
                       seed: int) -> list[PseudoPair]:
    """Deterministic pseudo-pairs over the given records, shuffled, roughly
    label-balanced. Reads only record content — never cluster ids."""
    categorical = categorical_attributes(corpus)
    attrs = corpus.schema.attributes
    rng = np.random.default_rng(np.random.SeedSequence([seed % 2**63, 0x5E1F]))
    ordered = sorted(record_ids)
    values = [dict(zip(attrs, corpus.by_id(rid).values)) for rid in ordered]

    def rec(vals: dict[str, str], rid: str) -> Record:
        return Record(id=rid, values=tuple(vals[a] for a in attrs))

    def pseudo(vl: dict[str, str], lid: str, vr: dict[str, str], rid: str,
               label: int) -> PseudoPair:
        pair_id = "|".join(sorted((lid, rid)))  # matches serialize_pair
        return PseudoPair(pair_id, rec(vl, lid), rec(vr, rid), label)

    pairs: list[PseudoPair] = []
    for i, vals in enumerate(values):
        va, vb = noised_view(vals, categorical, rng), noised_view(vals, categorical, rng)
        pairs.append(pseudo(va, f"ps{i}a", vb, f"ps{i}b", 1))
        if not categorical:
            continue
        for _ in range(_PARTNER_TRIES):
            j = int(rng.integers(len(values)))
            if j != i and clearly_distinct(vals, values[j], categorical):
                break
        else:
            continue
        va, vb = noised_view(vals, categorical, rng), noised_view(values[j], categorical, rng)
        pairs.append(pseudo(va, f"ps{i}a", vb, f"ps{j}b", 0))
    if not pairs:
        return pairs
    order = rng.permutation(len(pairs))
    shuffled = [pairs[int(k)] for k in order]
    n_pos = sum(p.label for p in shuffled)
    logger.info("built %d pseudo-pairs (%d positive) from %d records",
                len(shuffled), n_pos, len(ordered))
    return shuffled


def encode_pseudo_pair(pair: PseudoPair, pipeline: PairPipeline,
                       schema: Schema) -> LabeledExample:
    """Run a fabricated pair through the same serialize/inject/summarize/
    tokenize path as corpus pairs."""
    if pipeline.tfidf is None or pipeline.vocab is None:
        raise RuntimeError("pipeline needs refit_tfidf() and build_vocab() first")
    sp: SerializedPair = serialize_pair(pair.left, pair.right, schema)
    sp = inject_knowledge(sp, pipeline.taggers)
    sp = summarize(sp, pipeline.tfidf, pipeline.max_len, pipeline.stopwords)
    seq = tokenize(sp, pipeline.vocab, pipeline.max_len)
    return LabeledExample(pair.pair_id, seq, pair.label)


def pseudo_examples(corpus: Corpus, record_ids: list[str], pipeline: PairPipeline,
                    seed: int) -> list[LabeledExample]:
    """Build and encode every pseudo-pair the records support."""
    return [encode_pseudo_pair(p, pipeline, corpus.schema)
            for p in build_pseudo_pairs(corpus, record_ids, seed)]
