"""The trainable linear projection head and anchor-based classification.

The head is a single bias-free linear map ``W`` (d_out x d_in) applied to
frozen pre-projection features. Outputs are L2-normalized before every
dot product (classification and contrastive similarities alike); a zero
output normalizes to the zero vector so degenerate inputs never abort a
run, and any similarity involving it is 0.

Head file format ``PRJ1`` (little-endian): magic b"PRJ1", u32 d_in,
u32 d_out, then d_out*d_in f32 weights row-major.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .data import ClassAnchors, EmbeddingDataset
from .errors import ConfigError, DataError
from .rng import STAGE_HEAD_INIT, stage_rng

HEAD_MAGIC = b"PRJ1"
_HEAD_HEADER = struct.Struct("<4sII")


@dataclass
class ProjectionHead:
    weight: np.ndarray  # d_out x d_in

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        if self.weight.ndim != 2:
            raise DataError("head weight must be a 2-d matrix")
        if not np.all(np.isfinite(self.weight)):
            raise DataError("head weight contains non-finite entries")

    @property
    def d_in(self) -> int:
        return self.weight.shape[1]

    @property
    def d_out(self) -> int:
        return self.weight.shape[0]

    def copy(self) -> "ProjectionHead":
        return ProjectionHead(self.weight.copy())


@dataclass
class ClassifierConfig:
    beta: float = 100.0          # alignment temperature on cosine logits
    normalize_output: bool = True

    def __post_init__(self):
        if not (np.isfinite(self.beta) and self.beta > 0):
            raise ConfigError("beta must be finite and positive")


def init_head(d_in: int, d_out: int, seed: int = 0) -> ProjectionHead:
    """Zero-mean Gaussian init with variance 2/(d_in + d_out)."""
    rng = stage_rng(seed, STAGE_HEAD_INIT)
    scale = np.sqrt(2.0 / (d_in + d_out))
    return ProjectionHead(scale * rng.standard_normal((d_out, d_in)))


def save_head(head: ProjectionHead, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEAD_HEADER.pack(HEAD_MAGIC, head.d_in, head.d_out))
        fh.write(np.ascontiguousarray(head.weight, dtype="<f4").tobytes())


def load_head(path) -> ProjectionHead:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read head {path}: {exc}") from exc
    if len(raw) < _HEAD_HEADER.size:
        raise DataError(f"{path}: truncated header")
    magic, d_in, d_out = _HEAD_HEADER.unpack_from(raw)
    if magic != HEAD_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}, expected {HEAD_MAGIC!r}")
    expected = _HEAD_HEADER.size + 4 * d_in * d_out
    if len(raw) != expected:
        raise DataError(f"{path}: payload size {len(raw)}, expected {expected}")
    weights = np.frombuffer(raw, dtype="<f4", offset=_HEAD_HEADER.size)
    return ProjectionHead(weights.reshape(d_out, d_in).astype(np.float64))


def normalize_rows(raw: np.ndarray) -> np.ndarray:
    """Row-wise L2 normalization; zero rows pass through unchanged."""
    norms = np.linalg.norm(raw, axis=-1, keepdims=True)
    return np.divide(raw, norms, out=raw.astype(np.float64, copy=True), where=norms > 0)


def backprop_normalize(raw: np.ndarray, emb: np.ndarray, g_emb: np.ndarray) -> np.ndarray:
    """Pull embedding-space gradients back through row normalization.

    For a nonzero row with norm n and unit output h, the Jacobian is
    (I - h h^T)/n; zero rows passed through normalization untouched, so
    their gradient does too.
    """
    norms = np.linalg.norm(raw, axis=-1, keepdims=True)
    radial = np.sum(g_emb * emb, axis=-1, keepdims=True)
    tangent = g_emb - radial * emb
    return np.where(norms > 0, tangent / np.where(norms > 0, norms, 1.0), g_emb)


def forward_batch(head: ProjectionHead, feats: np.ndarray, cfg: ClassifierConfig) -> np.ndarray:
    """Map a feature matrix (n x d_in) to output embeddings (n x d_out)."""
    feats = np.asarray(feats)
    if feats.shape[-1] != head.d_in:
        raise DataError(f"feature dimension {feats.shape[-1]} != head d_in {head.d_in}")
    raw = feats @ head.weight.T
    return normalize_rows(raw) if cfg.normalize_output else raw.astype(np.float64)


def forward(head: ProjectionHead, v: np.ndarray, cfg: ClassifierConfig) -> np.ndarray:
    """Project one feature vector; L2-normalized unless configured off."""
    v = np.asarray(v)
    if v.shape != (head.d_in,):
        raise DataError(f"feature shape {v.shape} != (d_in,) = ({head.d_in},)")
    return forward_batch(head, v[None, :], cfg)[0]


def class_scores(head: ProjectionHead, v: np.ndarray, anchors: ClassAnchors,
                 cfg: ClassifierConfig) -> np.ndarray:
    """Per-class logits beta * <f(v), u_c>; softmax of these is the class law."""
    if anchors.d_out != head.d_out:
        raise DataError(f"anchor d_out {anchors.d_out} != head d_out {head.d_out}")
    return cfg.beta * (anchors.vectors @ forward(head, v, cfg))


def predict(head: ProjectionHead, ds: EmbeddingDataset, cfg: ClassifierConfig) -> np.ndarray:
    """Argmax class per sample (first index wins ties)."""
    if ds.d_out != head.d_out:
        raise DataError(f"dataset d_out {ds.d_out} != head d_out {head.d_out}")
    emb = forward_batch(head, ds.features, cfg)
    return np.argmax(emb @ ds.anchors.vectors.T, axis=1)


def ce_loss_and_grad(head: ProjectionHead, feats: np.ndarray, labels: np.ndarray,
                     anchors: ClassAnchors, cfg: ClassifierConfig) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over a batch and its exact gradient wrt W.

    Per sample: e = W v, h = e/||e|| (if normalizing and e != 0),
    logits = beta * U h, loss = -log softmax(logits)[y]. The gradient
    chains the softmax, the anchor dot products and the normalization
    Jacobian.
    """
    feats = np.asarray(feats, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if feats.ndim != 2 or feats.shape[0] == 0:
        raise DataError("ce_loss_and_grad requires a non-empty 2-d batch")
    if feats.shape[1] != head.d_in:
        raise DataError(f"feature dimension {feats.shape[1]} != head d_in {head.d_in}")
    if anchors.d_out != head.d_out:
        raise DataError(f"anchor d_out {anchors.d_out} != head d_out {head.d_out}")
    n = feats.shape[0]
    u = anchors.vectors.astype(np.float64)

    raw = feats @ head.weight.T
    emb = normalize_rows(raw) if cfg.normalize_output else raw
    logits = cfg.beta * (emb @ u.T)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(-logp[np.arange(n), labels].mean())

    dlogits = np.exp(logp)
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    g_emb = cfg.beta * (dlogits @ u)
    g_raw = backprop_normalize(raw, emb, g_emb) if cfg.normalize_output else g_emb
    return loss, g_raw.T @ feats
