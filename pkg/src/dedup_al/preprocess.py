"""Turn candidate pairs into model input strings, then token id sequences.

Pipeline per pair: serialize both records into one marker-annotated string,
inject domain knowledge by wrapping tagger matches in [LAST]/[/LAST], trim to
the token budget keeping high TF-IDF tokens, and map to vocabulary ids.
Every step is pure given its config, so pairs can be processed in parallel.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace

import numpy as np

from .blocking import DEFAULT_STOPWORDS, CandidatePair
from .corpus import Corpus, Record, Schema

__all__ = [
    "SPECIAL_TOKENS",
    "SerializedPair",
    "EntitySpan",
    "RegexTagger",
    "GazetteerTagger",
    "TfidfModel",
    "TokenSequence",
    "Vocabulary",
    "SummarizeError",
    "serialize_fields",
    "serialize_record",
    "serialize_pair",
    "inject_knowledge",
    "fit_tfidf",
    "summarize",
    "tokenize",
    "build_vocabulary",
    "default_taggers",
    "marker_balance_ok",
    "PairPipeline",
]

SPECIAL_TOKENS = ("[CLS]", "[SEP]", "[COL]", "[VAL]", "[LAST]", "[/LAST]", "[UNK]", "[PAD]")
CLS, SEP, COL, VAL, LAST_OPEN, LAST_CLOSE, UNK, PAD = range(8)
_SPECIAL_SET = frozenset(SPECIAL_TOKENS)


class SummarizeError(ValueError):
    """Token budget below the number of mandatory tokens."""

    def __init__(self, max_len: int, min_feasible: int):
        super().__init__(
            f"max_len={max_len} cannot hold the mandatory tokens; minimum feasible length is {min_feasible}"
        )
        self.min_feasible = min_feasible


@dataclass(frozen=True)
class SerializedPair:
    pair_id: str
    text: str
    stage: str  # serialized -> injected -> summarized

    def tokens(self) -> list[str]:
        return self.text.split()


@dataclass(frozen=True)
class EntitySpan:
    """Half-open token span [start, end) with a tagger label."""

    start: int
    end: int
    label: str

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError(f"bad span [{self.start}, {self.end})")


# ---------------------------------------------------------------------------
# Serialization


def serialize_fields(attributes, values) -> str:
    """"[COL] attr [VAL] value" blocks in attribute order; empty product -> ""."""
    parts: list[str] = []
    for attr, value in zip(attributes, values):
        parts.append("[COL]")
        parts.extend(attr.split())
        parts.append("[VAL]")
        parts.extend(value.split())
    return " ".join(parts)


def serialize_record(record: Record, schema: Schema) -> str:
    if len(record.values) != len(schema):
        raise ValueError(f"record {record.id!r} does not conform to schema")
    return serialize_fields(schema.attributes, record.values)


def serialize_pair(left: Record, right: Record, schema: Schema) -> SerializedPair:
    """"[CLS] <left> [SEP] <right> [SEP]"; empty segments collapse cleanly."""
    parts = ["[CLS]", serialize_record(left, schema), "[SEP]", serialize_record(right, schema), "[SEP]"]
    text = " ".join(p for p in parts if p)
    pair_id = CandidatePair.of(left.id, right.id).pair_id if left.id != right.id else f"{left.id}|{right.id}"
    return SerializedPair(pair_id=pair_id, text=text, stage="serialized")


# ---------------------------------------------------------------------------
# Knowledge injection


@dataclass(frozen=True)
class _TokenizedText:
    text: str
    tokens: tuple[str, ...]
    starts: tuple[int, ...]  # char offset of each token
    ends: tuple[int, ...]


def _tokenize_with_offsets(text: str) -> _TokenizedText:
    tokens, starts, ends = [], [], []
    for m in re.finditer(r"\S+", text):
        tokens.append(m.group(0))
        starts.append(m.start())
        ends.append(m.end())
    return _TokenizedText(text, tuple(tokens), tuple(starts), tuple(ends))


def _char_span_to_token_span(tt: _TokenizedText, lo: int, hi: int) -> tuple[int, int] | None:
    """Smallest [start, end) token range covering the char range, or None."""
    start = end = None
    for i, (s, e) in enumerate(zip(tt.starts, tt.ends)):
        if e > lo and s < hi:
            if start is None:
                start = i
            end = i + 1
    if start is None:
        return None
    return start, end


@dataclass(frozen=True)
class RegexTagger:
    """Marks every regex match; matches expand to whole-token boundaries."""

    name: str
    pattern: str
    label: str
    kind: str = "regex"

    def __post_init__(self):
        object.__setattr__(self, "_compiled", re.compile(self.pattern))

    def spans(self, tt: _TokenizedText) -> list[EntitySpan]:
        out = []
        for m in self._compiled.finditer(tt.text):
            if m.start() == m.end():
                continue
            span = _char_span_to_token_span(tt, m.start(), m.end())
            if span is not None:
                out.append(EntitySpan(span[0], span[1], self.label))
        return _merge_adjacent_disjoint(out)


@dataclass(frozen=True)
class GazetteerTagger:
    """Marks occurrences of lexicon entries, leftmost-longest, case-insensitive."""

    name: str
    lexicon: tuple[str, ...]
    label: str
    kind: str = "gazetteer"

    def __post_init__(self):
        if not self.lexicon:
            raise ValueError("gazetteer lexicon must be non-empty")
        entries = {tuple(e.casefold().split()) for e in self.lexicon}
        object.__setattr__(self, "_entries", entries)
        object.__setattr__(self, "_max_len", max(len(e) for e in entries))

    def spans(self, tt: _TokenizedText) -> list[EntitySpan]:
        folded = [t.casefold() for t in tt.tokens]
        out = []
        i = 0
        while i < len(folded):
            match_end = None
            for j in range(min(i + self._max_len, len(folded)), i, -1):
                if tuple(folded[i:j]) in self._entries:
                    match_end = j
                    break
            if match_end is not None:
                out.append(EntitySpan(i, match_end, self.label))
                i = match_end
            else:
                i += 1
        return out


def default_taggers(gazetteer: tuple[str, ...] | None = None, gazetteer_label: str = "TERM"):
    """Version/date/phone regex taggers, plus an optional domain gazetteer."""
    taggers = [
        RegexTagger("version", r"\b\d+(?:\.\d+)+\b|\b\d+(?:st|nd|rd|th)?[ ]?(?:[Ee]dition|[Ee]d\.)", "VERSION"),
        RegexTagger("date", r"\b\d{4}-\d{2}-\d{2}\b|\b\d{1,2}/\d{1,2}/\d{2,4}\b", "DATE"),
        RegexTagger("phone", r"(?<![\d.])\+?\d[\d\- ()]{6,}\d(?![\d.])", "PHONE"),
    ]
    if gazetteer:
        taggers.append(GazetteerTagger("gazetteer", tuple(gazetteer), gazetteer_label))
    return taggers


def _merge_adjacent_disjoint(spans: list[EntitySpan]) -> list[EntitySpan]:
    """Merge overlapping spans from one tagger into maximal disjoint spans."""
    if not spans:
        return spans
    spans = sorted(spans, key=lambda s: (s.start, -s.end))
    merged = [spans[0]]
    for s in spans[1:]:
        last = merged[-1]
        if s.start < last.end:
            if s.end > last.end:
                merged[-1] = EntitySpan(last.start, s.end, last.label)
        else:
            merged.append(s)
    return merged


def _validate_disjoint(spans: list[EntitySpan], tagger_name: str) -> None:
    ordered = sorted(spans, key=lambda s: s.start)
    for a, b in zip(ordered, ordered[1:]):
        if b.start < a.end:
            raise ValueError(f"tagger {tagger_name!r} emitted overlapping spans {a} and {b}")


def _marked_token_indices(tokens) -> set[int]:
    """Indices lying inside existing [LAST] ... [/LAST] regions (markers included)."""
    inside: set[int] = set()
    depth = 0
    for i, tok in enumerate(tokens):
        if tok == "[LAST]":
            depth += 1
            inside.add(i)
        elif tok == "[/LAST]":
            depth = max(depth - 1, 0)
            inside.add(i)
        elif depth > 0:
            inside.add(i)
    return inside


def inject_knowledge(sp: SerializedPair, taggers) -> SerializedPair:
    """Wrap tagger-identified key spans with [LAST]/[/LAST] markers.

    Spans are resolved left-to-right, longest match first, earlier tagger wins
    on ties. Regions already marked are skipped, as are spans touching special
    tokens. Markers are inserted right-to-left so token offsets stay valid.
    """
    if sp.stage != "serialized":
        raise ValueError(f"inject_knowledge expects stage 'serialized', got {sp.stage!r}")
    tt = _tokenize_with_offsets(sp.text)
    blocked = _marked_token_indices(tt.tokens)

    candidates: list[tuple[int, int, int, EntitySpan]] = []
    for order, tagger in enumerate(taggers):
        spans = tagger.spans(tt)
        _validate_disjoint(spans, tagger.name)
        for s in spans:
            if s.end > len(tt.tokens):
                raise ValueError(f"tagger {tagger.name!r} span {s} beyond token count")
            covered = range(s.start, s.end)
            if any(tt.tokens[i] in _SPECIAL_SET for i in covered):
                continue
            if any(i in blocked for i in covered):
                continue
            candidates.append((s.start, -(s.end - s.start), order, s))

    accepted: list[EntitySpan] = []
    taken: set[int] = set()
    for _, _, _, s in sorted(candidates, key=lambda c: (c[0], c[1], c[2])):
        if any(i in taken for i in range(s.start, s.end)):
            continue
        accepted.append(s)
        taken.update(range(s.start, s.end))

    tokens = list(tt.tokens)
    for s in sorted(accepted, key=lambda s: s.start, reverse=True):
        tokens.insert(s.end, "[/LAST]")
        tokens.insert(s.start, "[LAST]")
    return replace(sp, text=" ".join(tokens), stage="injected")


def marker_balance_ok(tokens) -> bool:
    """[LAST]/[/LAST] counts match and a left-to-right scan never goes negative."""
    depth = 0
    for tok in tokens:
        if tok == "[LAST]":
            depth += 1
        elif tok == "[/LAST]":
            depth -= 1
            if depth < 0:
                return False
    return depth == 0


# ---------------------------------------------------------------------------
# TF-IDF summarization


@dataclass(frozen=True)
class TfidfModel:
    """Smoothed idf table: ln((1+D)/(1+df)) + 1 over the fitted documents."""

    idf: dict[str, float]
    n_documents: int

    def idf_of(self, token: str) -> float:
        default = math.log(1.0 + self.n_documents) + 1.0  # df = 0
        return self.idf.get(token.casefold(), default)


def _scorable_tokens(text: str, stopwords) -> list[str]:
    return [
        t.casefold()
        for t in text.split()
        if t not in _SPECIAL_SET and t.casefold() not in stopwords
    ]


def fit_tfidf(texts, stopwords=DEFAULT_STOPWORDS) -> TfidfModel:
    """Document frequencies over whitespace tokens, special tokens and stopwords excluded."""
    if not texts:
        raise ValueError("fit_tfidf needs at least one document")
    df: dict[str, int] = {}
    for text in texts:
        for tok in set(_scorable_tokens(text, stopwords)):
            df[tok] = df.get(tok, 0) + 1
    n = len(texts)
    idf = {tok: math.log((1.0 + n) / (1.0 + d)) + 1.0 for tok, d in df.items()}
    return TfidfModel(idf=idf, n_documents=n)


def _attr_name_indices(tokens) -> set[int]:
    """Indices of attribute-name tokens: those between [COL] and the next [VAL]."""
    out: set[int] = set()
    in_attr = False
    for i, tok in enumerate(tokens):
        if tok == "[COL]":
            in_attr = True
        elif tok == "[VAL]":
            in_attr = False
        elif in_attr and tok not in _SPECIAL_SET:
            out.add(i)
    return out


def _enclosing_region(index: int, tokens) -> tuple[int, int] | None:
    """(open, close) marker positions around index, or None if unmarked."""
    open_pos = None
    for i in range(index - 1, -1, -1):
        if tokens[i] == "[/LAST]":
            return None
        if tokens[i] == "[LAST]":
            open_pos = i
            break
    if open_pos is None:
        return None
    for j in range(index + 1, len(tokens)):
        if tokens[j] == "[/LAST]":
            return open_pos, j
        if tokens[j] == "[LAST]":
            return None
    return None


def summarize(sp: SerializedPair, model: TfidfModel, max_len: int, stopwords=DEFAULT_STOPWORDS) -> SerializedPair:
    """Trim to ``max_len`` tokens: drop stopwords first, then lowest-TF-IDF tokens.

    Special tokens and attribute-name tokens are never dropped. TF is counted
    over this pair's tokens; idf comes from the fitted model. Ties drop the
    later occurrence first. If dropping empties a marked region, its marker
    pair is removed with it.
    """
    if sp.stage != "injected":
        raise ValueError(f"summarize expects stage 'injected', got {sp.stage!r}")
    tokens = sp.tokens()
    protected = {i for i, t in enumerate(tokens) if t in _SPECIAL_SET}
    protected |= _attr_name_indices(tokens)

    floor = _min_feasible_length(tokens, protected)
    if max_len < floor:
        raise SummarizeError(max_len, floor)
    if len(tokens) <= max_len:
        return replace(sp, stage="summarized")

    tf: dict[str, int] = {}
    for i, t in enumerate(tokens):
        if t not in _SPECIAL_SET:
            key = t.casefold()
            tf[key] = tf.get(key, 0) + 1

    stop_drops = [i for i, t in enumerate(tokens) if i not in protected and t.casefold() in stopwords]
    stop_drops.sort(reverse=True)
    ordinary = [i for i, t in enumerate(tokens) if i not in protected and t.casefold() not in stopwords]
    ordinary.sort(key=lambda i: (tf[tokens[i].casefold()] * model.idf_of(tokens[i]), -i))

    alive = [True] * len(tokens)
    count = len(tokens)
    for idx in stop_drops + ordinary:
        if count <= max_len:
            break
        region = _enclosing_region(idx, tokens) if alive[idx] else None
        alive[idx] = False
        count -= 1
        if region is not None:
            lo, hi = region
            if not any(alive[k] for k in range(lo + 1, hi)):
                alive[lo] = alive[hi] = False
                count -= 2

    kept = [t for i, t in enumerate(tokens) if alive[i]]
    return replace(sp, text=" ".join(kept), stage="summarized")


def _min_feasible_length(tokens, protected: set[int]) -> int:
    """Token count if everything droppable is dropped and emptied marker pairs removed."""
    keep = set(protected)
    for lo, hi in _marker_regions(tokens):
        if any(i in protected and tokens[i] not in _SPECIAL_SET for i in range(lo + 1, hi)):
            keep.add(lo)
            keep.add(hi)
        else:
            keep.discard(lo)
            keep.discard(hi)
    return len(keep)


def _marker_regions(tokens) -> list[tuple[int, int]]:
    regions = []
    stack: list[int] = []
    for i, tok in enumerate(tokens):
        if tok == "[LAST]":
            stack.append(i)
        elif tok == "[/LAST]" and stack:
            regions.append((stack.pop(), i))
    return regions


# ---------------------------------------------------------------------------
# Vocabulary and tokenization


@dataclass(frozen=True)
class Vocabulary:
    """Word-level token table; special tokens pinned at ids 0-7."""

    id_to_token: tuple[str, ...]

    def __post_init__(self):
        if tuple(self.id_to_token[:8]) != SPECIAL_TOKENS:
            raise ValueError("vocabulary must start with the reserved special tokens")
        object.__setattr__(self, "_token_to_id", {t: i for i, t in enumerate(self.id_to_token)})

    def __len__(self) -> int:
        return len(self.id_to_token)

    def id_of(self, token: str) -> int:
        if token in _SPECIAL_SET:
            return self._token_to_id[token]
        return self._token_to_id.get(token.casefold(), UNK)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("#dedup-al-vocab v1\n")
            for tok in self.id_to_token:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n")
            if header != "#dedup-al-vocab v1":
                raise ValueError(f"unrecognized vocabulary header {header!r}")
            tokens = tuple(line.rstrip("\n") for line in fh)
        return cls(tokens)


def build_vocabulary(texts, min_count: int = 1) -> Vocabulary:
    """Specials plus the sorted case-folded tokens of the given texts."""
    counts: dict[str, int] = {}
    for text in texts:
        for tok in text.split():
            if tok not in _SPECIAL_SET:
                key = tok.casefold()
                counts[key] = counts.get(key, 0) + 1
    kept = sorted(t for t, c in counts.items() if c >= min_count)
    return Vocabulary(SPECIAL_TOKENS + tuple(kept))


@dataclass(frozen=True)
class TokenSequence:
    """Padded id sequence; the first ``length`` positions are real tokens."""

    pair_id: str
    ids: np.ndarray  # (max_len,) int64
    length: int

    @property
    def attention_mask(self) -> np.ndarray:
        mask = np.zeros(self.ids.shape[0], dtype=bool)
        mask[: self.length] = True
        return mask


def tokenize(sp: SerializedPair, vocab: Vocabulary, max_len: int) -> TokenSequence:
    """Whitespace tokens to ids; OOV -> [UNK]; right-padded with [PAD]."""
    if sp.stage != "summarized":
        raise ValueError(f"tokenize expects stage 'summarized', got {sp.stage!r}")
    tokens = sp.tokens()
    if len(tokens) > max_len:
        raise ValueError(f"pair {sp.pair_id}: {len(tokens)} tokens exceed max_len={max_len}")
    ids = np.full(max_len, PAD, dtype=np.int64)
    for i, tok in enumerate(tokens):
        ids[i] = vocab.id_of(tok)
    return TokenSequence(pair_id=sp.pair_id, ids=ids, length=len(tokens))


# ---------------------------------------------------------------------------
# Pipeline helper


class PairPipeline:
    """Per-pair preprocessing with caching of the injection stage.

    Serialization and injection depend only on the corpus and taggers, so they
    are computed once per pair. Summarization depends on the TF-IDF model,
    which is refit at the start of every active-learning round over all pairs.
    """

    def __init__(self, corpus: Corpus, taggers, stopwords=DEFAULT_STOPWORDS, max_len: int = 128,
                 vocab: Vocabulary | None = None):
        self.corpus = corpus
        self.taggers = list(taggers)
        self.stopwords = frozenset(stopwords)
        self.max_len = max_len
        self._injected: dict[str, SerializedPair] = {}
        self._encoded: dict[str, TokenSequence] = {}
        self.tfidf: TfidfModel | None = None
        self.vocab = vocab

    def injected(self, pair_id: str) -> SerializedPair:
        sp = self._injected.get(pair_id)
        if sp is None:
            left_id, _, right_id = pair_id.partition("|")
            pair = serialize_pair(self.corpus.by_id(left_id), self.corpus.by_id(right_id), self.corpus.schema)
            sp = inject_knowledge(pair, self.taggers)
            self._injected[pair_id] = sp
        return sp

    def refit_tfidf(self, pair_ids) -> TfidfModel:
        self.tfidf = fit_tfidf([self.injected(pid).text for pid in pair_ids], self.stopwords)
        self._encoded.clear()
        return self.tfidf

    def build_vocab(self, pair_ids, min_count: int = 1) -> Vocabulary:
        self.vocab = build_vocabulary([self.injected(pid).text for pid in pair_ids], min_count)
        self._encoded.clear()
        return self.vocab

    def encode(self, pair_id: str) -> TokenSequence:
        if self.tfidf is None or self.vocab is None:
            raise RuntimeError("pipeline needs refit_tfidf() and build_vocab() before encode()")
        seq = self._encoded.get(pair_id)
        if seq is None:
            sp = summarize(self.injected(pair_id), self.tfidf, self.max_len, self.stopwords)
            seq = tokenize(sp, self.vocab, self.max_len)
            self._encoded[pair_id] = seq
        return seq
