"""Active-learning deduplication: blocking, a compact pair classifier trained
with R-Drop, uncertainty-driven labeling rounds, and a labeling-queue service.
"""
from __future__ import annotations

__version__ = "0.1.0"

from .active import (
    ActiveRun,
    GroundTruthOracle,
    LabelRequest,
    Oracle,
    RoundSuspended,
    SelectionStrategy,
    run_loop,
    select,
)
from .blocking import CandidatePair, block_candidates
from .config import RunConfig, load_config, standard_synthetic_config
from .corpus import Corpus, CorruptionConfig, Record, generate_synthetic, load_csv
from .evaluation import (
    ComparisonTable,
    Metrics,
    RoundReport,
    cluster_split,
    compare_strategies,
    evaluate_round,
    metrics,
)
from .preprocess import PairPipeline, Vocabulary, default_taggers
from .training import TrainConfig, rdrop_loss, train_round

__all__ = [
    "__version__",
    "ActiveRun",
    "CandidatePair",
    "ComparisonTable",
    "Corpus",
    "CorruptionConfig",
    "GroundTruthOracle",
    "LabelRequest",
    "Metrics",
    "Oracle",
    "PairPipeline",
    "Record",
    "RoundReport",
    "RoundSuspended",
    "RunConfig",
    "SelectionStrategy",
    "TrainConfig",
    "Vocabulary",
    "block_candidates",
    "cluster_split",
    "compare_strategies",
    "evaluate_round",
    "generate_synthetic",
    "load_config",
    "load_csv",
    "metrics",
    "rdrop_loss",
    "run_loop",
    "select",
    "standard_synthetic_config",
    "train_round",
]
