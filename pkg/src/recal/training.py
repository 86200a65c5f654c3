"""ERM head training, the contrastive recalibration loop, SGD with
momentum/weight decay, per-epoch validation and best-model selection.

Training never reads group labels: both trainers drop the group column
from the training split at entry. Validation may carry groups — the
best epoch is chosen by validation worst-group accuracy when they are
present, falling back to average accuracy (with a recorded note) when
they are not.

Epoch 0 in every record is the untrained starting head, so a zero-epoch
run degenerates to "return the input head" and a useless training run
can never select something worse than its starting point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data import EmbeddingDataset
from .errors import ConfigError, DataError, NumericError
from .head import (ClassifierConfig, ProjectionHead, ce_loss_and_grad,
                   forward_batch, predict)
from .losses import CalTerm, LossConfig, total_loss
from .metrics import evaluate
from .rng import STAGE_CFR, STAGE_ERM, stage_rng
from .sampling import (CalibrationSet, SamplerConfig, build_calibration_set,
                       init_centroids, sample_negative, sample_positive,
                       update_centroid)

SWEEP_AXES = ("lambda", "p_size", "n_size")


@dataclass
class TrainConfig:
    lr: float = 1e-5
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 100
    anchor_batch: int = 128
    cs_batch: int = 128
    eval_every: int = 1
    ema_gamma: float = 0.9
    use_cs: bool = True  # ablation switch for the holistic CS term
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    seed: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.lr) and self.lr >= 0):  # lr = 0 is a legal no-op run
            raise ConfigError("lr must be finite and >= 0")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.anchor_batch < 1 or self.cs_batch < 1:
            raise ConfigError("batch sizes must be >= 1")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if not 0 < self.ema_gamma <= 1:
            raise ConfigError("ema_gamma must lie in (0, 1]")


@dataclass
class EpochStat:
    epoch: int
    loss: float       # nan for the pre-training row
    val_wga: float    # nan on non-validated epochs
    val_avg: float


@dataclass
class TrainRecord:
    epochs: list[EpochStat]
    best_epoch: int
    best_head: ProjectionHead
    selected_by_wga: bool
    notes: list[str] = field(default_factory=list)


@dataclass
class SgdState:
    velocity: np.ndarray

    @classmethod
    def zeros_like(cls, head: ProjectionHead) -> "SgdState":
        return cls(np.zeros_like(head.weight))


def sgd_step(head: ProjectionHead, grad: np.ndarray, state: SgdState,
             cfg: TrainConfig) -> ProjectionHead:
    """g' = grad + wd*W;  m <- momentum*m + g';  W <- W - lr*m."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != head.weight.shape:
        raise DataError(f"gradient shape {grad.shape} != weight shape {head.weight.shape}")
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient; aborting the update")
    with np.errstate(over="ignore", invalid="ignore"):  # divergence becomes NumericError below
        g = grad + cfg.weight_decay * head.weight
        state.velocity = cfg.momentum * state.velocity + g
        new_w = head.weight - cfg.lr * state.velocity
    if not np.all(np.isfinite(new_w)):
        raise NumericError("weight update produced non-finite values "
                           "(diverging optimizer settings?)")
    return ProjectionHead(new_w)


class _Selector:
    """Tracks the running argmax of the validation metric (earliest tie wins
    because replacement requires a strict improvement)."""

    def __init__(self):
        self.best_epoch = -1
        self.best_metric = -math.inf
        self.best_head: ProjectionHead | None = None

    def offer(self, epoch: int, metric: float, head: ProjectionHead) -> None:
        if metric > self.best_metric:
            self.best_epoch = epoch
            self.best_metric = metric
            self.best_head = head.copy()


def _validate(head: ProjectionHead, val: EmbeddingDataset,
              cfg: TrainConfig) -> tuple[float, float]:
    """(wga, avg) — wga is nan when the split has no group labels."""
    if val.groups is not None:
        m = evaluate(head, val, cfg.classifier)
        return m.wga, m.avg
    preds = predict(head, val, cfg.classifier)
    return math.nan, float(np.mean(preds == val.labels))


def _check_pair(train: EmbeddingDataset, val: EmbeddingDataset) -> None:
    if train.n_samples == 0 or val.n_samples == 0:
        raise DataError("training and validation splits must be non-empty")
    if train.d_in != val.d_in or train.d_out != val.d_out:
        raise DataError("train/val dimension mismatch")
    if not np.array_equal(train.anchors.vectors, val.anchors.vectors):
        raise DataError("train/val class anchors differ")


def _epoch_loop(head0: ProjectionHead, val: EmbeddingDataset, cfg: TrainConfig,
                run_epoch, notes: list[str]) -> TrainRecord:
    """Shared skeleton: epoch-0 baseline row, train epochs via run_epoch,
    per-eval_every validation, argmax selection."""
    select_by_wga = val.groups is not None
    if not select_by_wga:
        notes.append("validation split has no group labels; selecting by average accuracy")
    head = head0.copy()
    sel = _Selector()
    wga, avg = _validate(head, val, cfg)
    sel.offer(0, wga if select_by_wga else avg, head)
    stats = [EpochStat(0, math.nan, wga, avg)]
    for epoch in range(1, cfg.epochs + 1):
        head, loss = run_epoch(head, epoch)
        if epoch % cfg.eval_every == 0:
            wga, avg = _validate(head, val, cfg)
            sel.offer(epoch, wga if select_by_wga else avg, head)
        else:
            wga, avg = math.nan, math.nan
        stats.append(EpochStat(epoch, loss, wga, avg))
    return TrainRecord(stats, sel.best_epoch, sel.best_head, select_by_wga, notes)


def train_erm(train: EmbeddingDataset, val: EmbeddingDataset, head0: ProjectionHead,
              cfg: TrainConfig) -> TrainRecord:
    """Minibatch SGD on cross-entropy against the class anchors."""
    _check_pair(train, val)
    train = train.without_groups()
    rng = stage_rng(cfg.seed, STAGE_ERM)
    state = SgdState.zeros_like(head0)
    n = train.n_samples

    def run_epoch(head: ProjectionHead, epoch: int) -> tuple[ProjectionHead, float]:
        perm = rng.permutation(n)
        parts: list[float] = []
        for start in range(0, n, cfg.anchor_batch):
            idx = perm[start:start + cfg.anchor_batch]
            loss, grad = ce_loss_and_grad(head, train.features[idx], train.labels[idx],
                                          train.anchors, cfg.classifier)
            head = sgd_step(head, grad, state, cfg)
            parts.append(loss * idx.size)
        return head, math.fsum(parts) / n

    return _epoch_loop(head0, val, cfg, run_epoch, [])


def train_cfr(train: EmbeddingDataset, val: EmbeddingDataset, erm_head: ProjectionHead,
              cfg: TrainConfig) -> TrainRecord:
    """Contrastive feature recalibration from an ERM-tuned head.

    Each step takes one anchor minibatch (with its positive/negative
    draws) plus one fresh uniform CS batch, applies a single SGD step on
    the combined objective, then advances the EMA centroids per anchor
    in batch order using the freshly updated head. The calibration set
    is frozen once, up front.
    """
    _check_pair(train, val)
    train = train.without_groups()
    notes: list[str] = []
    calset = build_calibration_set(train, erm_head, cfg.classifier)
    centroids = init_centroids(calset, train, erm_head, cfg.classifier, cfg.ema_gamma)
    anchors = calset.anchor_indices
    if anchors.size == 0:
        notes.append("reference head is perfect on train; falling back to CS-only training")
    rng = stage_rng(cfg.seed, STAGE_CFR)
    state = SgdState.zeros_like(erm_head)
    n = train.n_samples

    def run_step(head: ProjectionHead, batch: np.ndarray) -> tuple[ProjectionHead, float]:
        terms: list[CalTerm] = []
        ema_updates: list[tuple[int, np.ndarray]] = []
        for x in batch:
            pos = sample_positive(int(x), calset, centroids, rng, cfg.sampler)
            neg = sample_negative(int(x), calset, train, rng, cfg.sampler)
            in_loss = pos.indices if pos.in_loss else np.empty(0, np.int64)
            terms.append(CalTerm(int(x), in_loss, neg, pos.centroid))
            if pos.indices.size:
                ema_updates.append((int(calset.labels[x]), pos.indices))
        cs_idx = rng.integers(0, n, size=cfg.cs_batch) if cfg.use_cs else np.empty(0, np.int64)
        loss, grad = total_loss(head, train.features, train.labels, terms, cs_idx, cfg.loss)
        head = sgd_step(head, grad, state, cfg)
        for y, draw in ema_updates:
            emb = forward_batch(head, train.features[draw], cfg.classifier)
            update_centroid(centroids, y, emb)
        return head, loss

    def run_epoch(head: ProjectionHead, epoch: int) -> tuple[ProjectionHead, float]:
        parts: list[float] = []
        if anchors.size:
            order = anchors[rng.permutation(anchors.size)]
            batches = [order[s:s + cfg.anchor_batch]
                       for s in range(0, order.size, cfg.anchor_batch)]
        else:  # CS-only fallback keeps a comparable step count
            batches = [np.empty(0, np.int64)] * max(1, math.ceil(n / cfg.cs_batch))
        for batch in batches:
            head, loss = run_step(head, batch)
            parts.append(loss)
        return head, math.fsum(parts) / len(batches)

    return _epoch_loop(erm_head, val, cfg, run_epoch, notes)


def write_curve(record: TrainRecord, path) -> None:
    """Tab-separated training curve: epoch, loss, val_wga, val_avg."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch\tloss\tval_wga\tval_avg\n")
        for s in record.epochs:
            fh.write(f"{s.epoch}\t{s.loss!r}\t{s.val_wga!r}\t{s.val_avg!r}\n")


def sweep(train: EmbeddingDataset, val: EmbeddingDataset, test: EmbeddingDataset,
          erm_head: ProjectionHead, cfg: TrainConfig, axis: str,
          values: list) -> list[tuple[float, float, float]]:
    """One independent CFR run per value of the swept knob; each row is
    (value, test WGA, test average accuracy) for that run's best head."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}")
    if not values:
        raise ConfigError("sweep needs at least one value")
    rows = []
    for v in values:
        if axis == "lambda":
            run_cfg = replace(cfg, loss=replace(cfg.loss, lam=float(v)))
        elif axis == "p_size":
            run_cfg = replace(cfg, sampler=replace(cfg.sampler, p_size=int(v)))
        else:
            run_cfg = replace(cfg, sampler=replace(cfg.sampler, n_size=int(v)))
        record = train_cfr(train, val, erm_head, run_cfg)
        m = evaluate(record.best_head, test, cfg.classifier)
        rows.append((float(v), m.wga, m.avg))
    return rows


def write_sweep_table(axis: str, rows: list[tuple[float, float, float]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{axis}\twga\tavg\n")
        for v, wga, avg in rows:
            fh.write(f"{v!r}\t{wga!r}\t{avg!r}\n")
