"""Calibration-set construction, positive/negative sampling, EMA centroids.

The calibration set is built once from a reference (ERM-tuned) head:
training samples it misclassifies become anchors; per class, the
positive pool holds correctly-predicted members of that class and the
negative pool holds every sample of any other class regardless of
prediction. Four strategies assemble per-anchor batches:

    positives  DPS  p_size pool draws plus the EMA class centroid
               RPS  the same draws without the centroid
               CENTROID_ONLY  the centroid alone enters the loss
    negatives  RNS  uniform draws from the negative pool
               NNS  a uniform candidate draw, then the top-k by cosine
                    similarity to the anchor's raw (pre-projection)
                    feature, ties broken toward the lower index

Pools smaller than the requested batch fall back to sampling with
replacement so tiny datasets stay usable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import EmbeddingDataset, ClassAnchors
from .errors import ConfigError, DataError
from .head import ClassifierConfig, ProjectionHead, forward_batch, predict

POSITIVE_MODES = ("DPS", "RPS", "CENTROID_ONLY")
NEGATIVE_MODES = ("RNS", "NNS")


@dataclass
class SamplerConfig:
    positive_mode: str = "DPS"
    negative_mode: str = "RNS"
    p_size: int = 16
    n_size: int = 16
    nns_candidate_size: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.positive_mode not in POSITIVE_MODES:
            raise ConfigError(f"positive_mode must be one of {POSITIVE_MODES}")
        if self.negative_mode not in NEGATIVE_MODES:
            raise ConfigError(f"negative_mode must be one of {NEGATIVE_MODES}")
        if self.p_size < 1 and self.positive_mode != "CENTROID_ONLY":
            raise ConfigError("p_size must be >= 1 unless positive_mode is CENTROID_ONLY")
        if self.p_size < 0:
            raise ConfigError("p_size must be >= 0")
        if self.n_size < 1:
            raise ConfigError("n_size must be >= 1")
        if self.nns_candidate_size < self.n_size:
            raise ConfigError("nns_candidate_size must be >= n_size")


@dataclass
class CalibrationSet:
    """Anchor indices plus per-class positive and negative pools."""

    anchor_indices: np.ndarray
    positive_pools: list[np.ndarray]
    negative_pools: list[np.ndarray]
    labels: np.ndarray  # labels of the full training split, for lookups

    @property
    def n_classes(self) -> int:
        return len(self.positive_pools)


def build_calibration_set(train: EmbeddingDataset, head: ProjectionHead,
                          cfg: ClassifierConfig) -> CalibrationSet:
    """Partition the training split around the reference head's predictions."""
    if train.n_samples == 0:
        raise DataError("cannot build a calibration set from an empty training split")
    preds = predict(head, train, cfg)
    labels = train.labels
    correct = preds == labels
    anchor_indices = np.flatnonzero(~correct)
    positive_pools = [np.flatnonzero(correct & (labels == c)) for c in range(train.n_classes)]
    negative_pools = [np.flatnonzero(labels != c) for c in range(train.n_classes)]
    if all(len(pool) == 0 for pool in positive_pools):
        raise DataError("reference head predicts nothing correctly; calibration set unusable")
    return CalibrationSet(anchor_indices, positive_pools, negative_pools, labels.copy())


@dataclass
class CentroidState:
    """Per-class EMA centroids, kept L2-normalized (zero rows stay zero)."""

    centroids: np.ndarray  # n_classes x d_out
    gamma: float = 0.9

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        if not 0 < self.gamma <= 1:
            raise ConfigError("gamma must lie in (0, 1]")
        if not np.all(np.isfinite(self.centroids)):
            raise DataError("centroids contain non-finite entries")


def exact_centroid(ds: EmbeddingDataset, member_indices: np.ndarray,
                   head: ProjectionHead, cfg: ClassifierConfig) -> np.ndarray:
    """Normalized mean of the members' normalized embeddings.

    Kept as the naive full-recompute reference that the EMA scheme
    approximates; antipodal members can cancel to the zero vector, which
    is left as-is.
    """
    member_indices = np.asarray(member_indices, dtype=np.int64)
    if member_indices.size == 0:
        raise DataError("exact_centroid of an empty member set")
    emb = forward_batch(head, ds.features[member_indices], cfg)
    mean = emb.mean(axis=0)
    norm = np.linalg.norm(mean)
    return mean / norm if norm > 0 else mean


def init_centroids(calset: CalibrationSet, ds: EmbeddingDataset, head: ProjectionHead,
                   cfg: ClassifierConfig, gamma: float = 0.9) -> CentroidState:
    """Warm-start each class centroid from its positive pool under the
    given head; classes with an empty pool start at the zero vector."""
    cents = np.zeros((calset.n_classes, head.d_out))
    for c, pool in enumerate(calset.positive_pools):
        if len(pool):
            cents[c] = exact_centroid(ds, pool, head, cfg)
    return CentroidState(cents, gamma)


def update_centroid(state: CentroidState, y: int, pos_embeddings: np.ndarray) -> CentroidState:
    """EMA step c_y <- (1-gamma) c_y + gamma * mean(batch), then re-normalize.

    The batch must already be mapped by the current head and normalized;
    no gradient ever flows through centroids.
    """
    pos_embeddings = np.asarray(pos_embeddings, dtype=np.float64)
    if pos_embeddings.ndim != 2 or pos_embeddings.shape[0] == 0:
        raise DataError("update_centroid requires a non-empty 2-d embedding batch")
    g = state.gamma
    c = (1.0 - g) * state.centroids[y] + g * pos_embeddings.mean(axis=0)
    norm = np.linalg.norm(c)
    state.centroids[y] = c / norm if norm > 0 else c
    return state


@dataclass
class PositiveBatch:
    """Positive side of one anchor's contrastive batch.

    ``indices`` is the P(x) pool draw; it always feeds the EMA centroid
    update, and joins the loss except in CENTROID_ONLY mode. ``centroid``
    carries the class centroid row when the mode includes it.
    """

    indices: np.ndarray
    centroid: np.ndarray | None
    in_loss: bool

    @property
    def loss_size(self) -> int:
        return (len(self.indices) if self.in_loss else 0) + (self.centroid is not None)


def _draw(pool: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    if k == 0:
        return np.empty(0, dtype=np.int64)
    replace = len(pool) < k
    return rng.choice(pool, size=k, replace=replace).astype(np.int64)


def sample_positive(x_idx: int, calset: CalibrationSet, centroids: CentroidState,
                    rng: np.random.Generator, cfg: SamplerConfig) -> PositiveBatch:
    y = int(calset.labels[x_idx])
    pool = calset.positive_pools[y]
    if len(pool) == 0 and cfg.positive_mode != "CENTROID_ONLY":
        raise DataError(f"positive pool for class {y} is empty")
    draws = _draw(pool, cfg.p_size if len(pool) else 0, rng)
    if cfg.positive_mode == "DPS":
        return PositiveBatch(draws, centroids.centroids[y].copy(), True)
    if cfg.positive_mode == "RPS":
        return PositiveBatch(draws, None, True)
    return PositiveBatch(draws, centroids.centroids[y].copy(), False)


def sample_negative(x_idx: int, calset: CalibrationSet, ds: EmbeddingDataset,
                    rng: np.random.Generator, cfg: SamplerConfig) -> np.ndarray:
    y = int(calset.labels[x_idx])
    pool = calset.negative_pools[y]
    if len(pool) == 0:
        raise DataError(f"negative pool for class {y} is empty (single-class data?)")
    if cfg.negative_mode == "RNS":
        return _draw(pool, cfg.n_size, rng)
    # NNS: candidate draw, then top-k by cosine to the anchor's raw feature.
    if len(pool) <= cfg.nns_candidate_size:
        candidates = pool.astype(np.int64)
    else:
        candidates = rng.choice(pool, size=cfg.nns_candidate_size, replace=False).astype(np.int64)
    anchor_v = ds.features[x_idx].astype(np.float64)
    cand_v = ds.features[candidates].astype(np.float64)
    a_norm = np.linalg.norm(anchor_v)
    c_norms = np.linalg.norm(cand_v, axis=1)
    denom = np.where(c_norms > 0, c_norms, 1.0) * (a_norm if a_norm > 0 else 1.0)
    sims = np.where((c_norms > 0) & (a_norm > 0), cand_v @ anchor_v / denom, 0.0)
    order = np.lexsort((candidates, -sims))  # descending sim, lower index on ties
    ranked = candidates[order]
    if len(ranked) >= cfg.n_size:
        return ranked[: cfg.n_size]
    return np.resize(ranked, cfg.n_size)  # tiny pool: wrap the ranked list


def export_calibration_set(calset: CalibrationSet) -> dict[str, str]:
    """Sidecar-style key/value rendering of the index lists, for inspection."""
    pairs = {
        "n_anchors": str(len(calset.anchor_indices)),
        "anchors": ",".join(map(str, calset.anchor_indices.tolist())),
    }
    for c, pool in enumerate(calset.positive_pools):
        pairs[f"positive_pool_{c}"] = ",".join(map(str, pool.tolist()))
    for c, pool in enumerate(calset.negative_pools):
        pairs[f"negative_pool_{c}_size"] = str(len(pool))
    return pairs
