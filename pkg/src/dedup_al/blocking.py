"""Candidate pair generation: records sharing at least one non-stopword token.

The predicate is cheap on purpose; pairs that share no token are assumed
non-duplicates and never reach the classifier. Implemented with a
token -> record inverted index so the common case stays far from O(n^2).
"""
from __future__ import annotations

import csv
import logging
import re
from dataclasses import dataclass

from .corpus import Corpus

__all__ = [
    "CandidatePair",
    "block_candidates",
    "text_tokens",
    "export_pairs_csv",
    "DEFAULT_STOPWORDS",
    "DEFAULT_BUCKET_CAP",
]

log = logging.getLogger(__name__)

# Word runs, keeping dot-joined numerics/versions ("4.0", "85.00") intact.
_TOKEN_RE = re.compile(r"\w+(?:\.\w+)*", re.UNICODE)

DEFAULT_BUCKET_CAP = 500

DEFAULT_STOPWORDS = frozenset(
    """a an and are as at be but by for from has have in is it its of on or
    that the this to was were will with not no""".split()
)


def text_tokens(text: str) -> list[str]:
    """Case-folded word tokens of a raw attribute value."""
    return [m.group(0).casefold() for m in _TOKEN_RE.finditer(text)]


@dataclass(frozen=True, order=True)
class CandidatePair:
    """Unordered record pair in canonical form (left_id < right_id)."""

    left_id: str
    right_id: str

    def __post_init__(self):
        if not self.left_id < self.right_id:
            raise ValueError(f"pair not canonical: {self.left_id!r} !< {self.right_id!r}")

    @property
    def pair_id(self) -> str:
        return f"{self.left_id}|{self.right_id}"

    @classmethod
    def of(cls, a: str, b: str) -> "CandidatePair":
        if a == b:
            raise ValueError(f"self-pair for record {a!r}")
        return cls(a, b) if a < b else cls(b, a)

    @classmethod
    def from_pair_id(cls, pair_id: str) -> "CandidatePair":
        left, _, right = pair_id.partition("|")
        return cls(left, right)


def record_tokens(corpus: Corpus, stopwords: frozenset[str] | set[str]) -> dict[str, set[str]]:
    """Record id -> set of non-stopword tokens across all attribute values."""
    out: dict[str, set[str]] = {}
    for rec in corpus.records:
        toks: set[str] = set()
        for value in rec.values:
            toks.update(text_tokens(value))
        out[rec.id] = toks - set(stopwords)
    return out


def block_candidates(
    corpus: Corpus,
    stopwords: frozenset[str] | set[str] = DEFAULT_STOPWORDS,
    bucket_cap: int = DEFAULT_BUCKET_CAP,
) -> list[CandidatePair]:
    """All distinct record pairs sharing >= 1 common non-stopword token.

    Tokens whose bucket exceeds ``bucket_cap`` records are skipped (and
    logged): they would dominate the pair count while carrying no signal.
    Output is sorted by pair_id and duplicate-free.
    """
    if len(corpus) == 0:
        raise ValueError("corpus is empty")
    index: dict[str, list[str]] = {}
    for rec_id, toks in record_tokens(corpus, stopwords).items():
        for tok in toks:
            index.setdefault(tok, []).append(rec_id)

    pairs: set[CandidatePair] = set()
    for tok, bucket in index.items():
        if len(bucket) > bucket_cap:
            log.info("blocking: skipping token %r (bucket size %d > cap %d)", tok, len(bucket), bucket_cap)
            continue
        bucket.sort()
        for i in range(len(bucket)):
            for j in range(i + 1, len(bucket)):
                pairs.add(CandidatePair(bucket[i], bucket[j]))
    return sorted(pairs, key=lambda p: p.pair_id)


def export_pairs_csv(pairs: list[CandidatePair], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["left_id", "right_id"])
        for pair in pairs:
            writer.writerow([pair.left_id, pair.right_id])
