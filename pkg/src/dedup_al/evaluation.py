"""Pairwise deduplication metrics, baselines, and the experiment harness.

Evaluation is strictly pair-level: each candidate pair is judged duplicate or
non-duplicate on its own, and precision/recall/F1 are computed from the
resulting confusion counts. Splits are cluster-disjoint so no entity
contributes pairs to more than one of train/validation/test.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .blocking import CandidatePair
from .corpus import Corpus
from .encoder import EncoderParams, predict_batch
from .preprocess import PairPipeline

__all__ = [
    "ConfusionCounts",
    "Metrics",
    "RoundReport",
    "ClusterSplit",
    "PairSplit",
    "metrics",
    "f1_score",
    "levenshtein",
    "field_similarity",
    "field_similarity_baseline",
    "pair_truth",
    "cluster_split",
    "split_pairs",
    "evaluate_round",
    "compare_strategies",
    "ComparisonCell",
    "ComparisonTable",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        for name in ("tp", "fp", "fn", "tn"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    f1: float
    zero_division: tuple[str, ...] = ()


def metrics(counts: ConfusionCounts) -> Metrics:
    """Precision, recall and F1; zero denominators yield 0 and are flagged."""
    flags = []
    if counts.tp + counts.fp > 0:
        precision = counts.tp / (counts.tp + counts.fp)
    else:
        precision, flags = 0.0, flags + ["precision"]
    if counts.tp + counts.fn > 0:
        recall = counts.tp / (counts.tp + counts.fn)
    else:
        recall, flags = 0.0, flags + ["recall"]
    if precision + recall > 0:
        f1 = 2.0 * precision * recall / (precision + recall)
    else:
        f1, flags = 0.0, flags + ["f1"]
    return Metrics(precision=precision, recall=recall, f1=f1, zero_division=tuple(flags))


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean of precision and recall; 0 when both are 0."""
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


# ---------------------------------------------------------------------------
# Field-similarity baseline


def levenshtein(a: str, b: str) -> int:
    """Classic edit distance, two-row dynamic program."""
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def field_similarity(a: str, b: str) -> float:
    """Normalized edit similarity in [0, 1]; two empty strings count as 1."""
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(a, b) / longest


def field_similarity_baseline(pairs, corpus: Corpus, fieldname: str,
                              threshold: float) -> dict[str, bool]:
    """Duplicate iff the named field's edit similarity reaches the threshold."""
    if fieldname not in corpus.schema.attributes:
        raise ValueError(f"unknown field {fieldname!r}")
    out: dict[str, bool] = {}
    for pair in pairs:
        left = corpus.value(pair.left_id, fieldname)
        right = corpus.value(pair.right_id, fieldname)
        out[pair.pair_id] = field_similarity(left, right) >= threshold
    return out


# ---------------------------------------------------------------------------
# Ground truth and splits


def pair_truth(corpus: Corpus, pair_id: str) -> int:
    """1 iff both records carry the same non-null cluster id."""
    left_id, _, right_id = pair_id.partition("|")
    left = corpus.by_id(left_id).cluster_id
    right = corpus.by_id(right_id).cluster_id
    return int(left is not None and left == right)


@dataclass(frozen=True)
class ClusterSplit:
    train: frozenset[str]
    validation: frozenset[str]
    test: frozenset[str]

    def __post_init__(self):
        if self.train & self.validation or self.train & self.test or self.validation & self.test:
            raise ValueError("cluster splits must be disjoint")


def cluster_split(corpus: Corpus, ratios: tuple[float, float, float] = (0.6, 0.2, 0.2),
                  seed: int = 0) -> ClusterSplit:
    """Shuffle cluster ids and cut train/validation/test at the given ratios."""
    if abs(sum(ratios) - 1.0) > 1e-9 or any(r < 0 for r in ratios):
        raise ValueError(f"ratios must be non-negative and sum to 1, got {ratios}")
    clusters = sorted(corpus.clusters())
    rng = np.random.default_rng(seed)
    order = [clusters[i] for i in rng.permutation(len(clusters))]
    n = len(order)
    n_train = round(ratios[0] * n)
    n_val = round(ratios[1] * n)
    return ClusterSplit(
        train=frozenset(order[:n_train]),
        validation=frozenset(order[n_train:n_train + n_val]),
        test=frozenset(order[n_train + n_val:]),
    )


@dataclass(frozen=True)
class PairSplit:
    train: tuple[CandidatePair, ...]
    validation: tuple[CandidatePair, ...]
    test: tuple[CandidatePair, ...]


def split_pairs(pairs, corpus: Corpus, split: ClusterSplit) -> PairSplit:
    """Assign each pair to the split holding both endpoints; drop straddlers.

    Records without a cluster id ride with the training split.
    """
    def side(record_id: str) -> str | None:
        cluster = corpus.by_id(record_id).cluster_id
        if cluster is None or cluster in split.train:
            return "train"
        if cluster in split.validation:
            return "validation"
        if cluster in split.test:
            return "test"
        return None

    buckets: dict[str, list[CandidatePair]] = {"train": [], "validation": [], "test": []}
    for pair in pairs:
        left, right = side(pair.left_id), side(pair.right_id)
        if left is not None and left == right:
            buckets[left].append(pair)
    return PairSplit(train=tuple(buckets["train"]),
                     validation=tuple(buckets["validation"]),
                     test=tuple(buckets["test"]))


# ---------------------------------------------------------------------------
# Round evaluation


@dataclass(frozen=True)
class RoundReport:
    round_index: int
    strategy: str
    precision: float | None
    recall: float | None
    f1: float | None
    zero_division: tuple[str, ...]
    selected: tuple[str, ...]
    labeled_count: int
    unlabeled_count: int
    threshold: float = 0.5

    def to_dict(self) -> dict:
        return {
            "round_index": self.round_index,
            "strategy": self.strategy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "zero_division": list(self.zero_division),
            "selected": list(self.selected),
            "labeled_count": self.labeled_count,
            "unlabeled_count": self.unlabeled_count,
            "threshold": self.threshold,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RoundReport":
        return cls(
            round_index=d["round_index"], strategy=d["strategy"],
            precision=d["precision"], recall=d["recall"], f1=d["f1"],
            zero_division=tuple(d.get("zero_division", ())),
            selected=tuple(d["selected"]),
            labeled_count=d["labeled_count"], unlabeled_count=d["unlabeled_count"],
            threshold=d.get("threshold", 0.5),
        )


def confusion_from_predictions(probs: dict[str, float], truth: dict[str, int],
                               threshold: float = 0.5) -> ConfusionCounts:
    tp = fp = fn = tn = 0
    for pair_id, p in probs.items():
        predicted = p >= threshold
        actual = bool(truth[pair_id])
        if predicted and actual:
            tp += 1
        elif predicted:
            fp += 1
        elif actual:
            fn += 1
        else:
            tn += 1
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


def evaluate_round(params: EncoderParams, pipeline: PairPipeline,
                   test_pairs: list[tuple[str, int]], *, round_index: int,
                   strategy: str, selected: tuple[str, ...] = (),
                   labeled_count: int = 0, unlabeled_count: int = 0,
                   threshold: float = 0.5, batch_size: int = 128) -> RoundReport:
    """Score held-out labeled pairs at the decision threshold and report."""
    if not test_pairs:
        raise ValueError("cannot evaluate on an empty test set")
    seqs = [pipeline.encode(pair_id) for pair_id, _ in test_pairs]
    preds = predict_batch(params, seqs, batch_size=batch_size)
    probs = {pred.pair_id: pred.p for pred in preds}
    truth = dict(test_pairs)
    m = metrics(confusion_from_predictions(probs, truth, threshold))
    return RoundReport(
        round_index=round_index, strategy=strategy,
        precision=m.precision, recall=m.recall, f1=m.f1,
        zero_division=m.zero_division, selected=tuple(selected),
        labeled_count=labeled_count, unlabeled_count=unlabeled_count,
        threshold=threshold,
    )


# ---------------------------------------------------------------------------
# Strategy comparison harness


@dataclass(frozen=True)
class ComparisonCell:
    strategy: str
    round_index: int
    mean_f1: float
    std_f1: float
    mean_recall: float
    std_recall: float
    n_seeds: int


@dataclass(frozen=True)
class ComparisonTable:
    cells: tuple[ComparisonCell, ...]
    per_run: dict = field(default_factory=dict)  # (strategy, seed) -> [RoundReport]

    def cell(self, strategy: str, round_index: int) -> ComparisonCell:
        for c in self.cells:
            if c.strategy == strategy and c.round_index == round_index:
                return c
        raise KeyError((strategy, round_index))

    def rounds(self) -> list[int]:
        return sorted({c.round_index for c in self.cells})

    def strategies(self) -> list[str]:
        seen: list[str] = []
        for c in self.cells:
            if c.strategy not in seen:
                seen.append(c.strategy)
        return seen

    def to_rows(self) -> list[dict]:
        return [c.__dict__.copy() for c in self.cells]


def compare_strategies(corpus: Corpus, config, strategies, seeds) -> ComparisonTable:
    """Run the loop once per (strategy, seed) and aggregate per-round metrics.

    Runs use the ground-truth oracle; each run is internally deterministic, so
    listing the same strategy and seed twice reproduces identical columns.
    """
    # imported here: active imports this module at top level
    from .active import GroundTruthOracle, SelectionStrategy, run_loop

    per_run: dict[tuple[str, int], list[RoundReport]] = {}
    for strategy_kind in strategies:
        for seed in seeds:
            run_config = config.with_overrides(seed=int(seed), strategy=strategy_kind)
            strategy = SelectionStrategy(kind=strategy_kind,
                                         seed=int(seed) if strategy_kind == "random" else None)
            reports = run_loop(corpus, run_config, strategy=strategy,
                               oracle=GroundTruthOracle(corpus))
            per_run[(strategy_kind, int(seed))] = reports
            final = reports[-1] if reports else None
            logger.info("strategy=%s seed=%d final f1=%s", strategy_kind, seed,
                        None if final is None else final.f1)

    cells = []
    for strategy_kind in strategies:
        runs = [per_run[(strategy_kind, int(s))] for s in seeds]
        n_rounds = min(len(r) for r in runs) if runs else 0
        for round_idx in range(1, n_rounds + 1):
            f1s = np.array([r[round_idx - 1].f1 for r in runs], dtype=float)
            recalls = np.array([r[round_idx - 1].recall for r in runs], dtype=float)
            cells.append(ComparisonCell(
                strategy=strategy_kind, round_index=round_idx,
                mean_f1=float(f1s.mean()), std_f1=float(f1s.std()),
                mean_recall=float(recalls.mean()), std_recall=float(recalls.std()),
                n_seeds=len(runs),
            ))
    return ComparisonTable(cells=tuple(cells), per_run=per_run)


def write_reports_json(reports: list[RoundReport], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([r.to_dict() for r in reports], fh, indent=2)
        fh.write("\n")


def read_reports_json(path) -> list[RoundReport]:
    with open(path, encoding="utf-8") as fh:
        return [RoundReport.from_dict(d) for d in json.load(fh)]
