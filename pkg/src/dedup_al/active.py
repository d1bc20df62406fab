"""Pool-based active learning over candidate pairs.

One run owns a labeled pool T and an unlabeled pool R (disjoint by invariant).
Each round trains on T, scores R, selects the pairs worth labeling, waits for
labels from the oracle (ground truth or a human queue), and ingests them.
Every pool mutation is an event appended to a JSONL log before it is applied,
so the live pool is always the fold of the log and a crashed run resumes from
its last persisted event.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .blocking import block_candidates
from .config import RunConfig
from .corpus import Corpus
from .encoder import (EncoderConfig, EncoderParams, Prediction, init_params,
                      load_checkpoint, predict_batch, save_checkpoint)
from .evaluation import (RoundReport, cluster_split, evaluate_round, pair_truth,
                         read_reports_json, split_pairs, write_reports_json)
from .preprocess import PairPipeline, Vocabulary
from .pseudo import pseudo_examples
from .training import LabeledExample, train_round, write_training_log

__all__ = [
    "PoolState",
    "SelectionStrategy",
    "LabelRequest",
    "LabelError",
    "UnknownPairError",
    "AlreadyLabeledError",
    "RoundSuspended",
    "Oracle",
    "GroundTruthOracle",
    "EventLog",
    "apply_event",
    "fold_pool",
    "score_pool",
    "select",
    "validate_labels",
    "ingest_labels",
    "ActiveRun",
    "run_loop",
    "strategy_from_config",
]

logger = logging.getLogger(__name__)

STRATEGY_KINDS = ("uncertainty", "entropy", "random")


class LabelError(ValueError):
    pass


class UnknownPairError(LabelError):
    pass


class AlreadyLabeledError(LabelError):
    pass


class RoundSuspended(RuntimeError):
    """The oracle returned before the round's batch was fully labeled."""

    def __init__(self, round_index: int, remaining: int):
        super().__init__(f"round {round_index} suspended with {remaining} labels pending")
        self.round_index = round_index
        self.remaining = remaining


# ---------------------------------------------------------------------------
# Pool state


@dataclass
class PoolState:
    labeled: dict[str, int]            # T: pair_id -> label
    unlabeled: set[str]                # R
    predictions: dict[str, Prediction] = field(default_factory=dict)
    round_index: int = 0               # completed training rounds
    budget: int = 50
    rounds_total: int = 0
    seeded: bool = False               # round-0 seed labels ingested
    version: int = 0

    @classmethod
    def fresh(cls, pair_ids, budget: int, rounds_total: int) -> "PoolState":
        return cls(labeled={}, unlabeled=set(pair_ids), budget=budget,
                   rounds_total=rounds_total)

    @property
    def total_pairs(self) -> int:
        return len(self.labeled) + len(self.unlabeled)

    def check_invariants(self) -> None:
        overlap = set(self.labeled) & self.unlabeled
        if overlap:
            raise AssertionError(f"pools overlap: {sorted(overlap)[:5]}")
        if not 0 <= self.round_index <= self.rounds_total:
            raise AssertionError(f"round_index {self.round_index} outside [0, {self.rounds_total}]")

    def to_snapshot(self) -> dict:
        return {
            "labeled": {pid: y for pid, y in sorted(self.labeled.items())},
            "unlabeled": sorted(self.unlabeled),
            "round_index": self.round_index,
            "budget": self.budget,
            "rounds_total": self.rounds_total,
            "seeded": self.seeded,
            "version": self.version,
        }

    @classmethod
    def from_snapshot(cls, d: dict) -> "PoolState":
        return cls(labeled={pid: int(y) for pid, y in d["labeled"].items()},
                   unlabeled=set(d["unlabeled"]), round_index=d["round_index"],
                   budget=d["budget"], rounds_total=d["rounds_total"],
                   seeded=d["seeded"], version=d["version"])


@dataclass(frozen=True)
class SelectionStrategy:
    kind: str
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"strategy kind must be one of {STRATEGY_KINDS}, got {self.kind!r}")
        if self.kind == "random" and self.seed is None:
            raise ValueError("random strategy requires a seed")


def strategy_from_config(config: RunConfig) -> SelectionStrategy:
    seed = config.seed if config.strategy == "random" else None
    return SelectionStrategy(kind=config.strategy, seed=seed)


@dataclass(frozen=True)
class LabelRequest:
    pair_id: str
    left_id: str
    right_id: str
    left: dict[str, str]
    right: dict[str, str]
    p: float
    requested_at: str

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# ---------------------------------------------------------------------------
# Scoring, selection, label intake


def score_pool(params: EncoderParams, pool: PoolState, pipeline: PairPipeline,
               batch_size: int = 128) -> PoolState:
    """Refresh predictions for every unlabeled pair; skips, but logs, pairs
    whose preprocessing fails."""
    seqs = []
    for pair_id in sorted(pool.unlabeled):
        try:
            seqs.append(pipeline.encode(pair_id))
        except Exception as exc:
            logger.warning("scoring skipped pair %s: %s", pair_id, exc)
    preds = predict_batch(params, seqs, batch_size=batch_size)
    pool.predictions = {pred.pair_id: pred for pred in preds}
    return pool


def _binary_entropy(p: float) -> float:
    p = min(max(p, 1e-12), 1.0 - 1e-12)
    return -(p * math.log(p) + (1.0 - p) * math.log1p(-p))


def select(pool: PoolState, strategy: SelectionStrategy, n: int) -> list[str]:
    """Pick up to n unlabeled pairs; returns all of R when it is smaller.

    Uncertainty minimizes |p - 0.5|; entropy maximizes the binary entropy
    (the same ordering, kept as a separate strategy); random is a seeded
    uniform draw. Ties always break by ascending pair_id.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    universe = sorted(pool.unlabeled)
    if len(universe) <= n:
        return universe
    if strategy.kind == "random":
        rng = np.random.default_rng(strategy.seed)
        idx = rng.choice(len(universe), size=n, replace=False)
        return [universe[i] for i in sorted(idx)]
    scored = [pid for pid in universe if pid in pool.predictions]
    if not scored:
        raise ValueError("no fresh predictions; score the pool before selecting")
    if len(scored) < len(universe):
        logger.warning("%d unlabeled pairs lack predictions and are not selectable",
                       len(universe) - len(scored))
    if strategy.kind == "uncertainty":
        def key(pid):
            return (abs(pool.predictions[pid].p - 0.5), pid)
    else:
        def key(pid):
            return (-_binary_entropy(pool.predictions[pid].p), pid)
    return sorted(scored, key=key)[:n]


def validate_labels(pool: PoolState, labels: list[tuple[str, int]]) -> None:
    seen: set[str] = set()
    for pair_id, y in labels:
        if y not in (0, 1):
            raise LabelError(f"label for {pair_id!r} must be 0 or 1, got {y!r}")
        if pair_id in seen:
            raise AlreadyLabeledError(f"pair {pair_id!r} appears twice in one batch")
        seen.add(pair_id)
        if pair_id in pool.labeled:
            raise AlreadyLabeledError(f"pair {pair_id!r} is already labeled")
        if pair_id not in pool.unlabeled:
            raise UnknownPairError(f"pair {pair_id!r} is not in the unlabeled pool")


def ingest_labels(pool: PoolState, labels: list[tuple[str, int]]) -> PoolState:
    """Move pairs R -> T atomically; the whole batch is validated first."""
    validate_labels(pool, labels)
    for pair_id, y in labels:
        pool.unlabeled.remove(pair_id)
        pool.labeled[pair_id] = int(y)
    pool.version += 1
    return pool


# ---------------------------------------------------------------------------
# Event log


class EventLog:
    """Append-only JSONL log; every append is flushed and fsynced."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh = open(self.path, "a", encoding="utf-8")

    def append(self, kind: str, **payload) -> dict:
        event = {"kind": kind, **payload}
        self._fh.write(json.dumps(event) + "\n")
        self._fh.flush()
        os.fsync(self._fh.fileno())
        return event

    def close(self) -> None:
        self._fh.close()

    @staticmethod
    def read(path) -> list[dict]:
        events = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    events.append(json.loads(line))
        return events


def apply_event(pool: PoolState | None, event: dict) -> PoolState:
    """The one mutation path shared by the live run and log replay."""
    kind = event["kind"]
    if kind == "init":
        return PoolState.fresh(event["unlabeled"], event["budget"], event["rounds_total"])
    if pool is None:
        raise ValueError(f"event {kind!r} before init")
    if kind == "labels":
        ingest_labels(pool, [(pid, int(y)) for pid, y in event["items"]])
    elif kind == "round":
        if event["round"] == 0:
            pool.seeded = True
        else:
            pool.round_index = event["round"]
    elif kind == "selected":
        pass  # selection does not change the pool; kept for resume
    else:
        raise ValueError(f"unknown event kind {kind!r}")
    return pool


def fold_pool(events: list[dict]) -> PoolState:
    pool: PoolState | None = None
    for event in events:
        pool = apply_event(pool, event)
    if pool is None:
        raise ValueError("event log has no init event")
    return pool


# ---------------------------------------------------------------------------
# Oracles


class Oracle(Protocol):
    def label(self, requests: list[LabelRequest],
              submit: Callable[[list[tuple[str, int]]], None]) -> None:
        """Produce labels for the requested pairs by calling submit, possibly
        in several batches; return once done. Raising leaves the round
        suspended but resumable."""


@dataclass(frozen=True)
class GroundTruthOracle:
    """Labels straight from cluster co-membership (experiment mode)."""

    corpus: Corpus

    def label(self, requests, submit) -> None:
        submit([(rq.pair_id, pair_truth(self.corpus, rq.pair_id)) for rq in requests])


# ---------------------------------------------------------------------------
# The run


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


class ActiveRun:
    """One active-learning run: pools, model, pipeline, and persistence."""

    def __init__(self, corpus: Corpus, config: RunConfig, strategy: SelectionStrategy,
                 oracle: Oracle, run_dir=None, on_status=None):
        self.corpus = corpus
        self.config = config
        self.strategy = strategy
        self.oracle = oracle
        self.run_dir = Path(run_dir) if run_dir is not None else None
        self.on_status = on_status
        self.pipeline: PairPipeline | None = None
        self.params: EncoderParams | None = None
        self.pool: PoolState | None = None
        self.reports: list[RoundReport] = []
        self.test_pairs: list[tuple[str, int]] = []
        self._all_pair_ids: list[str] = []
        self._event_log: EventLog | None = None
        self._selected_events: dict[int, list] = {}
        self._pseudo_record_ids: list[str] = []
        self._pseudo_cache: list[LabeledExample] | None = None

    # -- construction ------------------------------------------------------

    @classmethod
    def start(cls, corpus: Corpus, config: RunConfig, strategy: SelectionStrategy | None = None,
              oracle: Oracle | None = None, run_dir=None, on_status=None,
              rounds: int | None = None) -> "ActiveRun":
        strategy = strategy or strategy_from_config(config)
        oracle = oracle or GroundTruthOracle(corpus)
        run = cls(corpus, config, strategy, oracle, run_dir=run_dir, on_status=on_status)
        run._prepare(rounds=config.rounds if rounds is None else rounds)
        return run

    @classmethod
    def resume(cls, corpus: Corpus, config: RunConfig, oracle: Oracle | None = None,
               run_dir=None, on_status=None) -> "ActiveRun":
        if run_dir is None:
            raise ValueError("resume requires a run directory")
        strategy = strategy_from_config(config)
        oracle = oracle or GroundTruthOracle(corpus)
        run = cls(corpus, config, strategy, oracle, run_dir=run_dir, on_status=on_status)
        run._prepare(rounds=None, resume=True)
        return run

    def _paths(self) -> dict[str, Path]:
        base = self.run_dir
        return {
            "events": base / "events.jsonl",
            "snapshot": base / "snapshot.json",
            "reports": base / "reports.json",
            "vocab": base / "vocab.txt",
            "checkpoints": base / "checkpoints",
            "logs": base / "logs",
        }

    def _prepare(self, rounds: int | None, resume: bool = False) -> None:
        config = self.config
        pairs = block_candidates(self.corpus, bucket_cap=config.bucket_cap)
        self._all_pair_ids = [p.pair_id for p in pairs]
        if self.corpus.has_truth:
            split = cluster_split(self.corpus, config.split_ratios, seed=config.seed)
            pair_split = split_pairs(pairs, self.corpus, split)
            train_ids = [p.pair_id for p in pair_split.train]
            self.test_pairs = [(p.pair_id, pair_truth(self.corpus, p.pair_id))
                               for p in pair_split.test]
        else:
            train_ids = list(self._all_pair_ids)
            self.test_pairs = []
        self._pseudo_record_ids = sorted({rid for pid in train_ids
                                          for rid in pid.split("|", 1)})

        self.pipeline = PairPipeline(self.corpus, config.build_taggers(),
                                     max_len=config.max_len)
        paths = self._paths() if self.run_dir else None
        if paths is not None:
            self.run_dir.mkdir(parents=True, exist_ok=True)
            paths["checkpoints"].mkdir(exist_ok=True)
            paths["logs"].mkdir(exist_ok=True)
        if paths is not None and paths["vocab"].exists():
            self.pipeline.vocab = Vocabulary.load(paths["vocab"])
        else:
            self.pipeline.build_vocab(self._all_pair_ids, config.min_token_count)
            if paths is not None:
                self.pipeline.vocab.save(paths["vocab"])
        self.pipeline.refit_tfidf(self._all_pair_ids)

        encoder_config = EncoderConfig(
            vocab_size=len(self.pipeline.vocab), d_model=config.encoder.d_model,
            n_heads=config.encoder.n_heads, n_layers=config.encoder.n_layers,
            d_ff=config.encoder.d_ff, max_len=config.max_len,
            dropout_rate=config.encoder.dropout_rate, seed=config.seed)
        self._encoder_config = encoder_config
        self.params = init_params(encoder_config)

        if resume:
            events = EventLog.read(paths["events"])
            self.pool = fold_pool(events)
            for event in events:
                if event["kind"] == "selected":
                    self._selected_events[event["round"]] = event["items"]
            self._event_log = EventLog(paths["events"])
            if paths["reports"].exists():
                self.reports = read_reports_json(paths["reports"])
            latest = self._latest_checkpoint()
            if latest is not None:
                self.params = load_checkpoint(latest)
        else:
            init_event = {"kind": "init", "unlabeled": sorted(train_ids),
                          "budget": config.budget, "rounds_total": rounds,
                          "config_digest": config.digest()}
            if paths is not None:
                if paths["events"].exists() and paths["events"].stat().st_size > 0:
                    raise FileExistsError(
                        f"{paths['events']} already holds a run; resume it instead")
                self._event_log = EventLog(paths["events"])
                self._event_log.append(**init_event)
            self.pool = apply_event(None, init_event)
        self.pool.check_invariants()

    @property
    def all_pair_ids(self) -> list[str]:
        """Every candidate pair id, across all splits."""
        return list(self._all_pair_ids)

    def _latest_checkpoint(self) -> Path | None:
        ckpts = sorted(self._paths()["checkpoints"].glob("round_*.npz"))
        return ckpts[-1] if ckpts else None

    def _round_checkpoint(self, round_index: int) -> Path:
        return self._paths()["checkpoints"] / f"round_{round_index:04d}.npz"

    # -- plumbing ----------------------------------------------------------

    def _status(self, status: str, round_index: int) -> None:
        if self.on_status is not None:
            self.on_status(status, round_index)

    def _append_and_apply(self, kind: str, **payload) -> None:
        event = {"kind": kind, **payload}
        if self._event_log is not None:
            self._event_log.append(**event)
        apply_event(self.pool, event)

    def _persist_snapshot(self) -> None:
        if self.run_dir is None:
            return
        path = self._paths()["snapshot"]
        tmp = path.with_suffix(".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(self.pool.to_snapshot(), fh)
        tmp.replace(path)

    def _persist_reports(self) -> None:
        if self.run_dir is not None:
            write_reports_json(self.reports, self._paths()["reports"])

    def _prob(self, pair_id: str) -> float:
        pred = self.pool.predictions.get(pair_id)
        return pred.p if pred is not None else 0.5

    def _round_seed(self, round_index: int) -> int:
        ss = np.random.SeedSequence([self.config.seed % 2**63, round_index])
        return int(ss.generate_state(1)[0])

    # -- round lifecycle ---------------------------------------------------

    def execute(self) -> list[RoundReport]:
        pool = self.pool
        total = pool.rounds_total
        self._persist_snapshot()
        if total > 0:
            if not pool.seeded:
                self._seed_round()
            for i in range(pool.round_index + 1, total + 1):
                self._run_round(i)
        self._status("done", pool.round_index)
        return list(self.reports)

    def _seed_round(self) -> None:
        items = self._selected_events.get(0)
        if items is None:
            self._status("scoring", 0)
            score_pool(self.params, self.pool, self.pipeline)
            n = min(self.pool.budget, len(self.pool.unlabeled))
            if n > 0:
                chosen = select(self.pool, SelectionStrategy("random", seed=self.config.seed), n)
            else:
                chosen = []
            items = [[pid, self._prob(pid)] for pid in chosen]
            self._append_and_apply("selected", round=0, items=items)
        pending = [(pid, p) for pid, p in items if pid in self.pool.unlabeled]
        if pending:
            self._await_labels(0, pending)
        self._append_and_apply("round", round=0)
        self._persist_snapshot()

    def _run_round(self, round_index: int) -> None:
        items = self._selected_events.get(round_index)
        if items is None:
            self._status("training", round_index)
            self._train(round_index)
            self._status("scoring", round_index)
            score_pool(self.params, self.pool, self.pipeline)
            n = min(self.pool.budget, len(self.pool.unlabeled))
            if n > 0:
                chosen = select(self.pool, self.strategy, n)
            else:
                chosen = []
            items = [[pid, self._prob(pid)] for pid in chosen]
            self._append_and_apply("selected", round=round_index, items=items)
        else:
            # resuming mid-round: the round's model was checkpointed before
            # selection, so it must exist
            self.params = load_checkpoint(self._round_checkpoint(round_index))

        if not any(r.round_index == round_index for r in self.reports):
            self.reports.append(self._evaluate(round_index, [pid for pid, _ in items]))
            self._persist_reports()

        pending = [(pid, p) for pid, p in items if pid in self.pool.unlabeled]
        if pending:
            self._await_labels(round_index, pending)
        self._append_and_apply("round", round=round_index)
        self._persist_snapshot()

    def _train(self, round_index: int) -> None:
        self.pipeline.refit_tfidf(self._all_pair_ids)
        examples = [LabeledExample(pid, self.pipeline.encode(pid), y)
                    for pid, y in sorted(self.pool.labeled.items())]
        n_real = len(examples)
        if self.config.pseudo_per_label > 0:
            examples = examples + self._pseudo_pool()[: self.config.pseudo_per_label * n_real]
        base = self.params if self.config.warm_start else init_params(self._encoder_config)
        # Later rounds start from already-fit weights; damping the step size
        # keeps the newly selected boundary labels from unsettling them.
        taper = 1.0 + self.config.lr_round_taper * (round_index - 1)
        train_config = dataclasses.replace(self.config.training,
                                           seed=self._round_seed(round_index),
                                           learning_rate=self.config.training.learning_rate / taper)
        self.params, epoch_log = train_round(base, examples, train_config)
        if self.run_dir is not None:
            save_checkpoint(self.params, self._round_checkpoint(round_index))
            write_training_log(epoch_log,
                               self._paths()["logs"] / f"train_round_{round_index}.jsonl")
        last = epoch_log[-1]
        logger.info("round %d trained on %d labeled + %d pseudo: total=%.4f acc=%.3f",
                    round_index, n_real, len(examples) - n_real,
                    last.loss.total, last.accuracy)

    def _pseudo_pool(self) -> list[LabeledExample]:
        """Self-supervised pairs, built once per run from training-split records."""
        if self._pseudo_cache is None:
            self._pseudo_cache = pseudo_examples(
                self.corpus, self._pseudo_record_ids, self.pipeline, self.config.seed)
        return self._pseudo_cache

    def _evaluate(self, round_index: int, selected: list[str]) -> RoundReport:
        if self.test_pairs:
            return evaluate_round(
                self.params, self.pipeline, self.test_pairs,
                round_index=round_index, strategy=self.strategy.kind,
                selected=tuple(selected), labeled_count=len(self.pool.labeled),
                unlabeled_count=len(self.pool.unlabeled),
                threshold=self.config.threshold)
        return RoundReport(
            round_index=round_index, strategy=self.strategy.kind,
            precision=None, recall=None, f1=None, zero_division=(),
            selected=tuple(selected), labeled_count=len(self.pool.labeled),
            unlabeled_count=len(self.pool.unlabeled), threshold=self.config.threshold)

    def _await_labels(self, round_index: int, pending: list[tuple[str, float]]) -> None:
        self._status("awaiting_labels", round_index)
        remaining = {pid for pid, _ in pending}
        requests = [
            LabelRequest(pair_id=pid,
                         left_id=pid.partition("|")[0], right_id=pid.partition("|")[2],
                         left=self.corpus.display(pid.partition("|")[0]),
                         right=self.corpus.display(pid.partition("|")[2]),
                         p=float(p), requested_at=_now())
            for pid, p in sorted(pending, key=lambda it: (abs(it[1] - 0.5), it[0]))
        ]

        def submit(labels: list[tuple[str, int]]) -> None:
            labels = [(pid, int(y)) for pid, y in labels]
            for pid, _ in labels:
                if pid not in remaining:
                    raise UnknownPairError(f"pair {pid!r} is not pending in round {round_index}")
            validate_labels(self.pool, labels)
            self._append_and_apply("labels", round=round_index,
                                   items=[[pid, y] for pid, y in labels])
            remaining.difference_update(pid for pid, _ in labels)
            self._persist_snapshot()

        self.oracle.label(requests, submit)
        if remaining:
            raise RoundSuspended(round_index, len(remaining))

    def close(self) -> None:
        if self._event_log is not None:
            self._event_log.close()


def run_loop(corpus: Corpus, config: RunConfig, strategy: SelectionStrategy | None = None,
             oracle: Oracle | None = None, rounds: int | None = None, *,
             run_dir=None, on_status=None) -> list[RoundReport]:
    """Execute a full active-learning run and return one report per round."""
    run = ActiveRun.start(corpus, config, strategy=strategy, oracle=oracle,
                          run_dir=run_dir, on_status=on_status, rounds=rounds)
    try:
        return run.execute()
    finally:
        run.close()
