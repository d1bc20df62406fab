"""Round training: dual-pass dropout objective with a symmetric KL regularizer.

Each batch is forwarded twice under independent dropout masks; the loss is the
sum of both cross-entropies plus alpha times the symmetric KL divergence
between the two predicted distributions, averaged over the batch. Gradients
for both passes are analytic and flow through the KL term.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .encoder import DropoutMask, EncoderParams, backward_batch, forward_batch, softmax
from .preprocess import TokenSequence

__all__ = [
    "TrainConfig",
    "LabeledExample",
    "LossBreakdown",
    "EpochStats",
    "TrainingDivergedError",
    "Adam",
    "rdrop_loss",
    "train_round",
    "write_training_log",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.8
    batch_size: int = 34
    epochs_per_round: int = 20
    learning_rate: float = 1e-3
    lr_schedule: str = "constant"  # or "cosine": decay to ~0 across the round
    average_tail: float = 0.0      # fraction of final epochs to weight-average
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    kl_epsilon: float = 1e-12
    oversample_ratio: float = 3.0  # negatives per positive after oversampling

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"lr_schedule must be constant or cosine, got {self.lr_schedule!r}")
        if not 0.0 <= self.average_tail <= 1.0:
            raise ValueError(f"average_tail must be in [0, 1], got {self.average_tail}")

    def epoch_lr(self, epoch: int) -> float:
        """Learning rate for a given epoch index under the configured schedule."""
        if self.lr_schedule == "cosine":
            span = max(1, self.epochs_per_round)
            return self.learning_rate * 0.5 * (1.0 + np.cos(np.pi * epoch / span))
        return self.learning_rate


@dataclass(frozen=True)
class LabeledExample:
    pair_id: str
    seq: TokenSequence
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")


@dataclass(frozen=True)
class LossBreakdown:
    nll: float
    kl: float
    total: float
    alpha: float

    def __post_init__(self):
        if self.kl < -1e-12:
            raise ValueError(f"kl must be non-negative, got {self.kl}")

    @classmethod
    def of(cls, nll: float, kl: float, alpha: float) -> "LossBreakdown":
        return cls(nll=nll, kl=kl, total=nll + alpha * kl, alpha=alpha)


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    loss: LossBreakdown
    accuracy: float

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "nll": self.loss.nll,
            "kl": self.loss.kl,
            "total": self.loss.total,
            "accuracy": self.accuracy,
        }


class TrainingDivergedError(RuntimeError):
    pass


def _validate_probability(name: str, p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (2,):
        raise ValueError(f"{name} must be a 2-vector, got shape {p.shape}")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"{name} is not a probability vector: {p}")
    return p


def rdrop_loss(p1, p2, y: int, alpha: float, kl_epsilon: float = 1e-12) -> LossBreakdown:
    """Dual-pass loss on one example from the two predicted distributions.

    nll sums both cross-entropies; kl is the symmetric KL divergence halved.
    Probabilities are clamped below by kl_epsilon before any log.
    """
    p1 = _validate_probability("p1", p1)
    p2 = _validate_probability("p2", p2)
    if y not in (0, 1):
        raise ValueError(f"y must be 0 or 1, got {y}")
    c1 = np.maximum(p1, kl_epsilon)
    c2 = np.maximum(p2, kl_epsilon)
    nll = float(-np.log(c1[y]) - np.log(c2[y]))
    kl_12 = float(np.sum(c1 * (np.log(c1) - np.log(c2))))
    kl_21 = float(np.sum(c2 * (np.log(c2) - np.log(c1))))
    kl = max(0.0, 0.5 * (kl_12 + kl_21))
    return LossBreakdown.of(nll=nll, kl=kl, alpha=alpha)


def rdrop_grads(p1: np.ndarray, p2: np.ndarray, labels: np.ndarray, alpha: float):
    """Batch gradients of the summed per-example loss w.r.t. both logit sets.

    p1, p2: (B, 2) softmax outputs; labels: (B,). Returns (dlogits1, dlogits2)
    for the SUM over the batch; callers rescale for means.
    """
    B = p1.shape[0]
    onehot = np.zeros_like(p1)
    onehot[np.arange(B), labels] = 1.0

    def dlogits(pa, pb):
        # dL/dp_a, then through the softmax Jacobian. The floor only bites
        # when a softmax output underflows; it keeps 1/p finite.
        pa = np.maximum(pa, 1e-12)
        pb = np.maximum(pb, 1e-12)
        g = -onehot / pa + 0.5 * alpha * (np.log(pa) - np.log(pb) + 1.0 - pb / pa)
        return pa * (g - np.sum(pa * g, axis=-1, keepdims=True))

    return dlogits(p1, p2), dlogits(p2, p1)


class Adam:
    """Adaptive-moment descent with bias correction."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def update(self, params: EncoderParams, grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, g in grads.items():
            m = self._m.setdefault(name, np.zeros_like(g))
            v = self._v.setdefault(name, np.zeros_like(g))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            step = lr * (m / bc1) / (np.sqrt(v / bc2) + self.epsilon)
            params.tensors[name] -= step


def _oversample(examples: list[LabeledExample], ratio: float,
                rng: np.random.Generator) -> list[LabeledExample]:
    """Duplicate positives until there is at least one per `ratio` negatives."""
    pos = [e for e in examples if e.label == 1]
    neg = [e for e in examples if e.label == 0]
    if not pos or not neg or ratio <= 0:
        return list(examples)
    target = int(np.ceil(len(neg) / ratio))
    if len(pos) >= target:
        return list(examples)
    extra_idx = rng.integers(0, len(pos), size=target - len(pos))
    return list(examples) + [pos[i] for i in extra_idx]


def _batch_arrays(batch: list[LabeledExample]):
    lb = max(e.seq.length for e in batch)
    ids = np.stack([e.seq.ids[:lb] for e in batch])
    mask = np.stack([e.seq.attention_mask[:lb] for e in batch])
    labels = np.array([e.label for e in batch], dtype=np.int64)
    return ids, mask, labels


def _mask_seed(seed: int, epoch: int, step: int) -> int:
    ss = np.random.SeedSequence([seed % 2**63, epoch, step])
    return int(ss.generate_state(1)[0])


def train_step(params: EncoderParams, optimizer: Adam, batch: list[LabeledExample],
               config: TrainConfig, epoch: int, step: int, lr: float | None = None):
    """One dual-pass gradient step on a batch. Returns (LossBreakdown, n_correct)."""
    ids, attn_mask, labels = _batch_arrays(batch)
    B = len(batch)
    seed = _mask_seed(config.seed, epoch, step)
    mask1 = DropoutMask(rate=params.config.dropout_rate, seed=seed, pass_index=0)
    mask2 = DropoutMask(rate=params.config.dropout_rate, seed=seed, pass_index=1)

    logits1, cache1 = forward_batch(params, ids, attn_mask, dropout=mask1, want_cache=True)
    logits2, cache2 = forward_batch(params, ids, attn_mask, dropout=mask2, want_cache=True)
    p1 = softmax(logits1, axis=-1)
    p2 = softmax(logits2, axis=-1)

    c1 = np.maximum(p1, config.kl_epsilon)
    c2 = np.maximum(p2, config.kl_epsilon)
    rows = np.arange(B)
    nll = float(-(np.log(c1[rows, labels]) + np.log(c2[rows, labels])).mean())
    kl_per = 0.5 * (np.sum(c1 * (np.log(c1) - np.log(c2)), axis=-1)
                    + np.sum(c2 * (np.log(c2) - np.log(c1)), axis=-1))
    kl = float(np.maximum(kl_per, 0.0).mean())
    loss = LossBreakdown.of(nll=nll, kl=kl, alpha=config.alpha)
    if not np.isfinite(loss.total):
        pair_ids = [e.pair_id for e in batch]
        logger.error("non-finite loss %r on batch %s", loss, pair_ids)
        raise TrainingDivergedError(f"non-finite loss at epoch {epoch} step {step}: {pair_ids}")

    dlogits1, dlogits2 = rdrop_grads(p1, p2, labels, config.alpha)
    grads = backward_batch(params, cache1, dlogits1 / B)
    for name, g in backward_batch(params, cache2, dlogits2 / B).items():
        grads[name] += g
    optimizer.update(params, grads, config.learning_rate if lr is None else lr)

    p_avg = 0.5 * (p1[:, 1] + p2[:, 1])
    n_correct = int(np.sum((p_avg >= 0.5).astype(np.int64) == labels))
    return loss, n_correct


def train_round(params: EncoderParams, examples: list[LabeledExample],
                config: TrainConfig) -> tuple[EncoderParams, list[EpochStats]]:
    """Train for one round of epochs over the labeled set; seeded, deterministic.

    Returns fresh params (the input is not mutated) and per-epoch mean stats.
    """
    if not examples:
        raise ValueError("cannot train on an empty example list")
    params = EncoderParams(config=params.config,
                           tensors={k: v.copy() for k, v in params.tensors.items()})
    optimizer = Adam(config.beta1, config.beta2, config.epsilon)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed % 2**63, 0xA11]))
    pool = _oversample(examples, config.oversample_ratio, rng)

    total_epochs = config.epochs_per_round
    tail = max(1, round(config.average_tail * total_epochs)) if config.average_tail > 0 else 0
    tail_sum: dict[str, np.ndarray] | None = None
    tail_n = 0

    log: list[EpochStats] = []
    for epoch in range(total_epochs):
        order = np.random.default_rng(
            np.random.SeedSequence([config.seed % 2**63, 1 + epoch])).permutation(len(pool))
        lr = config.epoch_lr(epoch)
        nll_sum = kl_sum = 0.0
        correct = 0
        for step, start in enumerate(range(0, len(pool), config.batch_size)):
            batch = [pool[i] for i in order[start:start + config.batch_size]]
            loss, n_correct = train_step(params, optimizer, batch, config, epoch, step, lr=lr)
            nll_sum += loss.nll * len(batch)
            kl_sum += loss.kl * len(batch)
            correct += n_correct
        mean = LossBreakdown.of(nll=nll_sum / len(pool), kl=kl_sum / len(pool),
                                alpha=config.alpha)
        log.append(EpochStats(epoch=epoch, loss=mean, accuracy=correct / len(pool)))
        if tail and epoch >= total_epochs - tail:
            if tail_sum is None:
                tail_sum = {k: v.copy() for k, v in params.tensors.items()}
            else:
                for k, v in params.tensors.items():
                    tail_sum[k] += v
            tail_n += 1

    # Averaging late-epoch weights lands in the flat center of the minimum the
    # round converged to, instead of wherever the last step happened to stop.
    if tail_sum is not None:
        for k in params.tensors:
            params.tensors[k] = tail_sum[k] / tail_n
    params.validate_finite()
    return params, log


def write_training_log(log: list[EpochStats], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for entry in log:
            fh.write(json.dumps(entry.to_dict()) + "\n")
