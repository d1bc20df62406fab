"""Record data model, CSV ingestion, and synthetic corpus generation.

A corpus is an immutable collection of flat records sharing one schema.
Ground truth, when present, is a ``cluster_id`` per record: records in the
same cluster refer to the same real-world entity.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Schema",
    "Record",
    "Corpus",
    "CorruptionConfig",
    "IngestError",
    "load_csv",
    "export_csv",
    "generate_synthetic",
    "true_pair_count",
]


class IngestError(ValueError):
    """Raised when a CSV file cannot be turned into a valid corpus."""


@dataclass(frozen=True)
class Schema:
    """Ordered list of attribute names. Order is preserved everywhere downstream."""

    attributes: tuple[str, ...]

    def __post_init__(self):
        if not self.attributes:
            raise ValueError("schema must have at least one attribute")
        if len(set(self.attributes)) != len(self.attributes):
            raise ValueError("attribute names must be unique")

    def __len__(self) -> int:
        return len(self.attributes)


@dataclass(frozen=True)
class Record:
    """One row: an id, attribute values aligned with the schema, optional truth."""

    id: str
    values: tuple[str, ...]
    cluster_id: str | None = None


@dataclass(frozen=True)
class Corpus:
    schema: Schema
    records: tuple[Record, ...]
    has_truth: bool = False

    def __post_init__(self):
        seen: set[str] = set()
        for rec in self.records:
            if len(rec.values) != len(self.schema):
                raise ValueError(
                    f"record {rec.id!r} has {len(rec.values)} values, "
                    f"schema has {len(self.schema)} attributes"
                )
            if rec.id in seen:
                raise ValueError(f"duplicate record id {rec.id!r}")
            seen.add(rec.id)
            if self.has_truth and rec.cluster_id is None:
                raise ValueError(f"record {rec.id!r} missing cluster_id in truth corpus")

    def __len__(self) -> int:
        return len(self.records)

    def by_id(self, record_id: str) -> Record:
        return self._index()[record_id]

    def _index(self) -> dict[str, Record]:
        # lazy id -> record map; frozen dataclass, so stash on the instance dict
        cache = self.__dict__.get("_id_index")
        if cache is None:
            cache = {rec.id: rec for rec in self.records}
            self.__dict__["_id_index"] = cache
        return cache

    def clusters(self) -> dict[str, list[str]]:
        """cluster_id -> record ids, in record order. Requires truth."""
        if not self.has_truth:
            raise ValueError("corpus has no ground-truth clusters")
        out: dict[str, list[str]] = {}
        for rec in self.records:
            out.setdefault(rec.cluster_id, []).append(rec.id)
        return out

    def value(self, record_id: str, attribute: str) -> str:
        rec = self.by_id(record_id)
        return rec.values[self.schema.attributes.index(attribute)]

    def display(self, record_id: str) -> dict[str, str]:
        """Attribute name -> value mapping for one record."""
        rec = self.by_id(record_id)
        return dict(zip(self.schema.attributes, rec.values))


def load_csv(path, id_column: str, truth_column: str | None = None) -> Corpus:
    """Load a corpus from a UTF-8, RFC-4180 CSV file with a header row.

    Attribute order equals header order minus the id/truth columns. Missing
    cells become empty strings. Rows with the wrong column count, duplicate
    ids, and ids containing '|' (reserved for pair ids) are ingestion errors.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: empty file, expected a header row") from None
        if id_column not in header:
            raise IngestError(f"{path}: id column {id_column!r} not in header")
        if truth_column is not None and truth_column not in header:
            raise IngestError(f"{path}: truth column {truth_column!r} not in header")
        id_idx = header.index(id_column)
        truth_idx = header.index(truth_column) if truth_column is not None else None
        attr_idx = [
            i for i in range(len(header)) if i != id_idx and i != truth_idx
        ]
        schema = Schema(tuple(header[i] for i in attr_idx))

        records: list[Record] = []
        seen: set[str] = set()
        for row_num, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise IngestError(
                    f"{path}: row {row_num} has {len(row)} columns, expected {len(header)}"
                )
            rec_id = row[id_idx]
            if not rec_id:
                raise IngestError(f"{path}: row {row_num} has an empty id")
            if "|" in rec_id:
                raise IngestError(f"{path}: row {row_num} id {rec_id!r} contains '|'")
            if rec_id in seen:
                raise IngestError(f"{path}: row {row_num} duplicate id {rec_id!r}")
            seen.add(rec_id)
            cluster = row[truth_idx] if truth_idx is not None else None
            records.append(
                Record(id=rec_id, values=tuple(row[i] for i in attr_idx), cluster_id=cluster)
            )
    return Corpus(schema=schema, records=tuple(records), has_truth=truth_column is not None)


def export_csv(corpus: Corpus, path) -> None:
    """Write the corpus back out; inverse of load_csv up to column order.

    Header is ``id`` + attributes, plus ``cluster_id`` when truth is present.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["id", *corpus.schema.attributes]
        if corpus.has_truth:
            header.append("cluster_id")
        writer.writerow(header)
        for rec in corpus.records:
            row = [rec.id, *rec.values]
            if corpus.has_truth:
                row.append(rec.cluster_id)
            writer.writerow(row)


# ---------------------------------------------------------------------------
# Synthetic corpora


@dataclass(frozen=True)
class CorruptionConfig:
    """Per-field corruption probabilities for duplicate copies."""

    typo_rate: float = 0.0
    field_drop_rate: float = 0.0
    abbreviation_rate: float = 0.0
    numeric_reformat_rate: float = 0.0
    duplicates_per_entity: int = 0
    seed: int = 0

    def __post_init__(self):
        for name in ("typo_rate", "field_drop_rate", "abbreviation_rate", "numeric_reformat_rate"):
            rate = getattr(self, name)
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {rate}")
        if self.duplicates_per_entity < 0:
            raise ValueError("duplicates_per_entity must be >= 0")


_SYNTH_SCHEMA = Schema(("brand", "category", "series", "price", "title"))

# Tier pricing: a small menu of price points, as in a catalog with fixed
# price bands. Reformatting ("85.00" -> "85") stays within a closed set.
_PRICE_POINTS = ("9.99", "19.99", "29.99", "49.99", "85.00", "120.00", "199.00", "349.00")

_CONSONANTS = "bcdfghklmnprstvz"
_VOWELS = "aeiou"


def _word_pool(rng: np.random.Generator, size: int, syllables: tuple[int, int]) -> list[str]:
    """Deterministic pseudo-word pool; guarantees `size` distinct words."""
    pool: list[str] = []
    seen: set[str] = set()
    lo, hi = syllables
    while len(pool) < size:
        n = int(rng.integers(lo, hi + 1))
        word = "".join(
            _CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))]
            for _ in range(n)
        )
        if word not in seen:
            seen.add(word)
            pool.append(word)
    return pool


def _typo(value: str, rng: np.random.Generator) -> str:
    """Transpose or substitute one character of one token."""
    tokens = value.split()
    if not tokens:
        return value
    ti = int(rng.integers(len(tokens)))
    tok = tokens[ti]
    if len(tok) >= 2 and rng.random() < 0.5:
        i = int(rng.integers(len(tok) - 1))
        tok = tok[:i] + tok[i + 1] + tok[i] + tok[i + 2 :]
    else:
        i = int(rng.integers(len(tok)))
        repl = _CONSONANTS[rng.integers(len(_CONSONANTS))]
        tok = tok[:i] + repl + tok[i + 1 :]
    tokens[ti] = tok
    return " ".join(tokens)


def _abbreviate(value: str, rng: np.random.Generator) -> str:
    """Strip the vowels from one word, keeping its leading letter.

    Vowel-stripping keeps the abbreviated form specific to the source word,
    so abbreviation never makes two unrelated records collide in blocking.
    """
    tokens = value.split()
    eligible = [i for i, tok in enumerate(tokens) if len(tok) >= 4]
    if not eligible:
        return value
    i = eligible[int(rng.integers(len(eligible)))]
    tok = tokens[i]
    stripped = tok[0] + "".join(ch for ch in tok[1:] if ch not in _VOWELS)
    tokens[i] = stripped if len(stripped) >= 2 else tok
    return " ".join(tokens)


def _numeric_reformat(value: str) -> str:
    if "." in value:
        head = value.split(".", 1)[0]
        return head if head else value
    return f"{value}.00" if value.isdigit() else value


# Field drops mostly truncate the free-text title; losing a whole
# categorical value is the rarer data-entry failure.
_DROP_VICTIMS = ("title_word", "brand", "category", "series", "price")
_DROP_WEIGHTS = (0.6, 0.1, 0.1, 0.1, 0.1)


def _corrupt_record(clean: dict[str, str], cfg: CorruptionConfig, rng: np.random.Generator) -> dict[str, str]:
    out = dict(clean)
    if rng.random() < cfg.field_drop_rate:
        victim = _DROP_VICTIMS[rng.choice(len(_DROP_VICTIMS), p=_DROP_WEIGHTS)]
        if victim == "title_word":
            words = out["title"].split()
            if len(words) > 1:
                words.pop(int(rng.integers(len(words))))
                out["title"] = " ".join(words)
            else:
                out["title"] = ""
        else:
            out[victim] = ""
    if out["title"] and rng.random() < cfg.abbreviation_rate:
        out["title"] = _abbreviate(out["title"], rng)
    if out["price"] and rng.random() < cfg.numeric_reformat_rate:
        out["price"] = _numeric_reformat(out["price"])
    if out["title"] and rng.random() < cfg.typo_rate:
        out["title"] = _typo(out["title"], rng)
    return out


_SIG_POOL = 6

# All (brand, category, series) index triples satisfying the parity rule
# series = (brand + category) mod 6. Any two distinct triples in this family
# disagree on at least two of the three positions.
_SIG_CODE = tuple((a, b, (a + b) % _SIG_POOL) for a in range(_SIG_POOL) for b in range(_SIG_POOL))


def _assign_signatures(keysets: list[set[str]], rng: np.random.Generator) -> list[int]:
    """Pick a signature index per entity so token-sharing entities differ.

    Entities whose records can land in a common blocking bucket (shared
    title word or version token) must not agree on brand/category/series,
    otherwise no field separates them downstream. Greedy coloring over the
    token-share graph; the code has 36 signatures and share-degrees are
    small, so a free signature is essentially always available.
    """
    by_token: dict[str, list[int]] = {}
    for ent, keys in enumerate(keysets):
        for tok in keys:
            by_token.setdefault(tok, []).append(ent)
    neighbors: list[set[int]] = [set() for _ in keysets]
    for ents in by_token.values():
        for i in ents:
            for j in ents:
                if i != j:
                    neighbors[i].add(j)

    assigned: list[int] = [-1] * len(keysets)
    n_codes = len(_SIG_CODE)
    for ent in range(len(keysets)):
        taken = {assigned[nb] for nb in neighbors[ent] if assigned[nb] >= 0}
        start = int(rng.integers(n_codes))
        choice = next(
            (c % n_codes for c in range(start, start + n_codes) if c % n_codes not in taken),
            start,
        )
        assigned[ent] = choice
    return assigned


def generate_synthetic(n_entities: int, config: CorruptionConfig) -> Corpus:
    """Generate a catalog-style corpus: clean entities plus corrupted duplicates.

    Each entity combines brand, category, and series values from small pools
    with a tier price and a short free-text title. The title words key the
    blocking; the categorical fields separate entities: two entities that
    share a potential blocking token always differ in at least two of
    brand/category/series. Each entity yields one clean record ``e{n}-0``
    and ``config.duplicates_per_entity`` corrupted copies ``e{n}-k`` sharing
    its cluster id. Corruption hits the title hardest (typos, abbreviations,
    dropped words); categorical fields are only dropped outright, and prices
    may be reformatted. Deterministic given ``config.seed``. The title pool
    scales with ``n_entities`` so cross-entity token collisions (the
    blocking negatives) stay roughly linear in corpus size.
    """
    if n_entities <= 0:
        raise ValueError("n_entities must be > 0")
    rng = np.random.default_rng(config.seed)

    brand_pool = _word_pool(rng, _SIG_POOL, (2, 3))
    category_pool = _word_pool(rng, _SIG_POOL, (2, 3))
    series_pool = _word_pool(rng, _SIG_POOL, (2, 3))
    title_pool = _word_pool(rng, max(60, 4 * n_entities), (2, 4))

    titles: list[list[str]] = []
    keysets: list[set[str]] = []
    for _ in range(n_entities):
        n_title = int(rng.integers(2, 5))
        picks = rng.choice(len(title_pool), size=n_title, replace=False)
        words = [title_pool[i] for i in picks]
        if rng.random() < 0.15:
            words.append(f"{int(rng.integers(1, 10))}.{int(rng.integers(0, 10))}")
        titles.append(words)
        keysets.append(set(words))
    signatures = _assign_signatures(keysets, rng)

    records: list[Record] = []
    for ent in range(n_entities):
        bi, ci, si = _SIG_CODE[signatures[ent]]
        clean = {
            "brand": brand_pool[bi],
            "category": category_pool[ci],
            "series": series_pool[si],
            "price": _PRICE_POINTS[rng.integers(len(_PRICE_POINTS))],
            "title": " ".join(titles[ent]),
        }
        cluster = f"c{ent}"
        records.append(
            Record(
                id=f"e{ent}-0",
                values=tuple(clean[a] for a in _SYNTH_SCHEMA.attributes),
                cluster_id=cluster,
            )
        )
        for copy in range(1, config.duplicates_per_entity + 1):
            corrupted = _corrupt_record(clean, config, rng)
            values = tuple(corrupted[a] for a in _SYNTH_SCHEMA.attributes)
            records.append(Record(id=f"e{ent}-{copy}", values=values, cluster_id=cluster))
    return Corpus(schema=_SYNTH_SCHEMA, records=tuple(records), has_truth=True)


def true_pair_count(corpus: Corpus) -> int:
    """Number of distinct same-cluster record pairs."""
    total = 0
    for members in corpus.clusters().values():
        total += len(members) * (len(members) - 1) // 2
    return total
