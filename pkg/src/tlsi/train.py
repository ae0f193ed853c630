"""Adam, the epoch loop, and evaluation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .batching import EncodedDataset
from .config import TrainConfig
from .data import DatasetSplits, Vocabulary, make_splits
from .metrics import auc as auc_score
from .metrics import logloss as logloss_score
from .model import VARIANT_SPECS, TlsiModel
from .temporal import DatasetClock

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


class MissingGradient(RuntimeError):
    pass


class Adam:
    """Bias-corrected Adam over named parameters (the optimizer state)."""

    def __init__(self, lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params, clip_norm: float = 0.0) -> None:
        params = [p for p in params if p.trainable]
        untouched = [p.name for p in params if not p.touched]
        if untouched:
            raise MissingGradient(f"no gradient reached: {', '.join(untouched)}")
        grads = [p.grad for p in params]
        if clip_norm > 0:
            norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
            if norm > clip_norm:
                grads = [g * (clip_norm / norm) for g in grads]
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g in zip(params, grads):
            m = self.m.get(p.name)
            if m is None:
                m = self.m[p.name] = np.zeros_like(p.value)
                self.v[p.name] = np.zeros_like(p.value)
            v = self.v[p.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.value = p.value - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.zero_grad()


def adam_step(params, state: Adam, clip_norm: float = 0.0) -> None:
    state.step(params, clip_norm)


@dataclass
class TrainResult:
    model: TlsiModel
    loss_trace: list[float] = field(default_factory=list)
    valid_trace: list[float] = field(default_factory=list)


@dataclass
class MetricsReport:
    auc: float
    logloss: float
    n_pos: int
    n_neg: int
    predictions: np.ndarray | None = None
    gate_rows: list[tuple] | None = None        # (example_id, alpha_mean, recency_seconds)
    attention_rows: list[tuple] | None = None   # (example_id, position, a_c, a_t)

    def to_dict(self) -> dict:
        return {"auc": self.auc, "logloss": self.logloss, "n_pos": self.n_pos, "n_neg": self.n_neg}


def _param_norms(model: TlsiModel) -> str:
    return ", ".join(f"{n}={np.linalg.norm(p.value):.3g}" for n, p in model.params.items() if p.trainable)


def epoch_batches(lengths: np.ndarray, batch_size: int, rng: np.random.Generator, pool: int) -> list[np.ndarray]:
    """Shuffled mini-batches of row indices.

    With ``pool > 1`` the shuffled rows are cut into runs of ``pool`` batches,
    each run is sorted by history length before being split, and the batch
    order is shuffled again. Batches then carry little padding while every
    epoch still sees a fresh random partition.
    """
    order = rng.permutation(len(lengths))
    if pool > 1:
        span = batch_size * pool
        order = np.concatenate([chunk[np.argsort(lengths[chunk], kind="stable")]
                                for chunk in np.split(order, range(span, len(order), span))])
    batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if pool > 1:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    return batches


def train(train_set: EncodedDataset, config: TrainConfig, n_items: int, n_categories: int,
          valid_set: EncodedDataset | None = None, model: TlsiModel | None = None) -> TrainResult:
    """Fixed-epoch mini-batch training on the mean logloss of each batch."""
    if len(train_set) == 0:
        raise ValueError("empty training set")
    model = model or TlsiModel(config, n_items, n_categories)
    opt = Adam(lr=config.lr)
    rng = np.random.default_rng([config.seed, 2])
    params = model.trainable()
    result = TrainResult(model)
    for epoch in range(config.epochs):
        total = 0.0
        for b, rows in enumerate(epoch_batches(train_set.long.lengths, config.batch_size, rng, config.bucket_pool)):
            batch = train_set.batch(rows)
            loss, _ = model.loss(batch, training=True)
            value = float(loss.value)
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite loss {value} at epoch {epoch + 1}, batch {b}; "
                                       f"parameter norms: {_param_norms(model)}")
            ad.backward(loss, params)
            opt.step(params, config.clip_norm)
            total += value * batch.size
        result.loss_trace.append(total / len(train_set))
        msg = f"epoch {epoch + 1}/{config.epochs} train loss {result.loss_trace[-1]:.5f}"
        if valid_set is not None and len(valid_set):
            result.valid_trace.append(evaluate(model, valid_set, config).logloss)
            msg += f" valid loss {result.valid_trace[-1]:.5f}"
        log.info(msg)
    return result


def evaluate(model: TlsiModel, dataset: EncodedDataset, config: TrainConfig, dump_gates: bool = False,
             dump_attention: bool = False) -> MetricsReport:
    preds = np.empty(len(dataset))
    gate_rows = [] if dump_gates else None
    att_rows = [] if dump_attention else None
    # predictions do not depend on batch composition at eval, so group similar lengths
    order = np.argsort(dataset.long.lengths, kind="stable")
    for batch in dataset.batches(config.eval_batch_size, order):
        out = model.forward(batch, training=False)
        preds[batch.example_ids] = out.pred.value
        if dump_gates:
            alpha_mean = out.alpha.mean(axis=1) if out.alpha is not None else np.full(batch.size, np.nan)
            for r, ex in enumerate(batch.example_ids):
                gate_rows.append((int(ex), float(alpha_mean[r]), int(dataset.recency_seconds[ex])))
        if dump_attention:
            for r, ex in enumerate(batch.example_ids):
                for k in range(int(batch.long.lengths[r])):
                    a_c = float(out.a_c[r, k]) if out.a_c is not None else float("nan")
                    a_t = float(out.a_t[r, k]) if out.a_t is not None else float("nan")
                    att_rows.append((int(ex), k, a_c, a_t))
    labels = dataset.labels
    n_pos = int((labels == 1).sum())
    return MetricsReport(auc_score(labels, preds), logloss_score(labels, preds), n_pos, len(labels) - n_pos,
                         preds, gate_rows, att_rows)


@dataclass
class Experiment:
    splits: DatasetSplits
    train_set: EncodedDataset
    valid_set: EncodedDataset | None
    test_set: EncodedDataset


def prepare(events, vocab: Vocabulary, clock: DatasetClock, config: TrainConfig) -> Experiment:
    """Split events and encode every split for ``config.variant``."""
    keep = max(config.max_len, config.max_len_long)
    splits = make_splits(events, vocab, max_len=keep, min_len=config.min_len, train_targets=config.train_targets,
                         valid_fraction=config.valid_fraction, seed=config.seed)
    tp = VARIANT_SPECS[config.variant].time_point

    def enc(seqs):
        return EncodedDataset(seqs, clock, config.max_len, config.max_len_long, tp) if seqs else None

    if not splits.test:
        raise ValueError("no user has enough events to form a test example")
    return Experiment(splits, enc(splits.train), enc(splits.valid), enc(splits.test))


def run_experiment(events, vocab: Vocabulary, clock: DatasetClock, config: TrainConfig):
    """Train on the train split and report test metrics; returns (TrainResult, MetricsReport, Experiment)."""
    exp = prepare(events, vocab, clock, config)
    if exp.train_set is None:
        raise ValueError("empty training set")
    result = train(exp.train_set, config, vocab.n_items, vocab.n_categories, exp.valid_set)
    report = evaluate(result.model, exp.test_set, config)
    return result, report, exp
