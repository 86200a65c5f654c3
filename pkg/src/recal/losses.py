"""Calibration loss, holistic cosine-similarity loss, combined objective.

All three losses operate on (typically unit-norm) embeddings and return
analytic gradients alongside their values. ``total_loss`` lifts the
per-embedding gradients to a gradient with respect to the projection
weight by chaining through the linear map and the L2-normalization
Jacobian, summing over every occurrence of each sample.

Loss values are accumulated with ``math.fsum`` so that permuting batch
order leaves them unchanged to well below 1e-9.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .head import ProjectionHead, backprop_normalize, normalize_rows


@dataclass
class LossConfig:
    tau: float = 0.1   # contrastive temperature
    lam: float = 1.0   # weight on the calibration term in the combination

    def __post_init__(self):
        if not (math.isfinite(self.tau) and self.tau > 0):
            raise ConfigError("tau must be finite and > 0")
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise ConfigError("lam must be finite and >= 0")


def _logsumexp(z: np.ndarray) -> float:
    """Order-independent log-sum-exp; -inf for an empty vector."""
    if z.size == 0:
        return -math.inf
    m = float(np.max(z))
    return m + math.log(math.fsum(np.exp(z - m)))


def calib_loss(anchor: np.ndarray, positives: np.ndarray, negatives: np.ndarray,
               cfg: LossConfig, const_mask: np.ndarray | None = None,
               ) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Contrastive pull toward positives against a shared negative set.

        L = -(1/K) sum_k log( e^{z+_k} / (e^{z+_k} + sum_m e^{z-_m}) ),
        z = <anchor, row> / tau

    ``positives`` holds all K in-loss rows — the caller appends the class
    centroid row for the strategies that include it and marks it in
    ``const_mask`` so its gradient slot is zeroed (stop-gradient).
    An empty negative set makes every term log(1) = 0.

    Returns (loss, g_anchor, g_positives, g_negatives).
    """
    anchor = np.asarray(anchor, dtype=np.float64)
    positives = np.asarray(positives, dtype=np.float64).reshape(-1, anchor.shape[0])
    negatives = np.asarray(negatives, dtype=np.float64).reshape(-1, anchor.shape[0])
    if positives.shape[0] == 0:
        raise DataError("calibration loss needs at least one positive row")
    k = positives.shape[0]
    z_pos = positives @ anchor / cfg.tau
    z_neg = negatives @ anchor / cfg.tau
    lse_neg = _logsumexp(z_neg)
    log_denom = np.logaddexp(z_pos, lse_neg)
    loss = math.fsum(log_denom - z_pos) / k

    dz_pos = (np.exp(z_pos - log_denom) - 1.0) / k
    if negatives.shape[0]:
        dz_neg = np.exp(z_neg[None, :] - log_denom[:, None]).sum(axis=0) / k
    else:
        dz_neg = np.zeros(0)
    g_anchor = (dz_pos @ positives + dz_neg @ negatives) / cfg.tau
    g_pos = np.outer(dz_pos, anchor) / cfg.tau
    g_neg = np.outer(dz_neg, anchor) / cfg.tau
    if const_mask is not None:
        g_pos[np.asarray(const_mask, dtype=bool)] = 0.0
    return loss, g_anchor, g_pos, g_neg


def _cos_rows(u: np.ndarray, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Cosine of u against each row; zero-vector operands give cosine 0."""
    u_norm = float(np.linalg.norm(u))
    r_norms = np.linalg.norm(rows, axis=1)
    valid = (r_norms > 0) & (u_norm > 0)
    denom = np.where(valid, r_norms * (u_norm if u_norm > 0 else 1.0), 1.0)
    cos = np.where(valid, rows @ u / denom, 0.0)
    return cos, r_norms, u_norm


def cs_loss(u: np.ndarray, same_class: np.ndarray, other_class: np.ndarray,
            ) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Holistic cosine-similarity loss for one anchor embedding:

        L = - sum_p cos(u, u_p) + sum_j cos(u, u_j)

    with the general cosine (not assuming unit norms); any pair with a
    zero-vector operand contributes 0 to both value and gradient.

    Returns (loss, g_u, g_same, g_other).
    """
    u = np.asarray(u, dtype=np.float64)
    same_class = np.asarray(same_class, dtype=np.float64).reshape(-1, u.shape[0])
    other_class = np.asarray(other_class, dtype=np.float64).reshape(-1, u.shape[0])
    if same_class.shape[0] == 0 and other_class.shape[0] == 0:
        raise DataError("cosine-similarity loss needs at least one pairing")

    loss_parts: list[float] = []
    g_u = np.zeros_like(u)

    def side(rows: np.ndarray, sign: float) -> np.ndarray:
        nonlocal g_u
        cos, r_norms, u_norm = _cos_rows(u, rows)
        loss_parts.extend((sign * cos).tolist())
        g_rows = np.zeros_like(rows)
        if rows.shape[0] and u_norm > 0:
            ok = r_norms > 0
            safe_r = np.where(ok, r_norms, 1.0)
            # d cos/d u = r/(|u||r|) - cos * u/|u|^2, and symmetrically for r
            gu_rows = rows / (safe_r[:, None] * u_norm) - cos[:, None] * u / u_norm**2
            gr = (u[None, :] / (safe_r[:, None] * u_norm)
                  - cos[:, None] * rows / safe_r[:, None] ** 2)
            gu_rows[~ok] = 0.0
            gr[~ok] = 0.0
            g_u = g_u + sign * gu_rows.sum(axis=0)
            g_rows = sign * gr
        return g_rows

    g_same = side(same_class, -1.0)
    g_other = side(other_class, +1.0)
    return math.fsum(loss_parts), g_u, g_same, g_other


@dataclass
class CalTerm:
    """One anchor's contribution to the calibration side of the objective.

    ``positive_indices`` are the in-loss pool rows (empty in centroid-only
    mode); ``centroid`` is an extra constant positive row or None.
    """

    anchor_index: int
    positive_indices: np.ndarray
    negative_indices: np.ndarray
    centroid: np.ndarray | None = None


def total_loss(head: ProjectionHead, features: np.ndarray, labels: np.ndarray,
               cal_terms: list[CalTerm], cs_indices: np.ndarray, cfg: LossConfig,
               ) -> tuple[float, np.ndarray]:
    """Combined objective  L = lam * sum(cal terms) + sum(CS terms).

    CS pairings are taken within the ``cs_indices`` batch: for each member,
    same-class members are pulled and different-class members pushed.
    Embeddings are the L2-normalized head outputs; the returned gradient
    is with respect to the weight matrix, with each sample's embedding
    gradient chained through the normalization Jacobian and accumulated
    over every occurrence (duplicate draws included).
    """
    cs_indices = np.asarray(cs_indices, dtype=np.int64)
    if not cal_terms and cs_indices.size == 0:
        raise DataError("total loss needs at least one calibration or CS term")

    chunks = [cs_indices]
    for t in cal_terms:
        chunks.append(np.asarray([t.anchor_index], dtype=np.int64))
        chunks.append(np.asarray(t.positive_indices, dtype=np.int64))
        chunks.append(np.asarray(t.negative_indices, dtype=np.int64))
    uniq = np.unique(np.concatenate(chunks)) if chunks else np.empty(0, np.int64)
    lookup = {int(g): i for i, g in enumerate(uniq)}

    feats = features[uniq].astype(np.float64)
    raw = feats @ head.weight.T
    emb = normalize_rows(raw)
    g_emb = np.zeros_like(emb)

    def local(idx) -> np.ndarray:
        return np.asarray([lookup[int(i)] for i in np.atleast_1d(idx)], dtype=np.int64)

    cal_parts: list[float] = []
    for t in cal_terms:
        a_loc = lookup[int(t.anchor_index)]
        p_loc = local(t.positive_indices)
        n_loc = local(t.negative_indices)
        pos_rows = emb[p_loc]
        const_mask = None
        if t.centroid is not None:
            pos_rows = np.vstack([pos_rows, t.centroid]) if pos_rows.size else \
                np.asarray(t.centroid, dtype=np.float64).reshape(1, -1)
            const_mask = np.zeros(pos_rows.shape[0], dtype=bool)
            const_mask[-1] = True
        loss, g_a, g_p, g_n = calib_loss(emb[a_loc], pos_rows, emb[n_loc], cfg,
                                         const_mask=const_mask)
        cal_parts.append(loss)
        g_emb[a_loc] += cfg.lam * g_a
        if p_loc.size:
            np.add.at(g_emb, p_loc, cfg.lam * g_p[: p_loc.size])
        if n_loc.size:
            np.add.at(g_emb, n_loc, cfg.lam * g_n)

    cs_parts: list[float] = []
    if cs_indices.size:
        cs_loc = local(cs_indices)
        cs_labels = labels[cs_indices]
        for i in range(cs_indices.size):
            mask = np.ones(cs_indices.size, dtype=bool)
            mask[i] = False
            same = cs_loc[mask & (cs_labels == cs_labels[i])]
            other = cs_loc[mask & (cs_labels != cs_labels[i])]
            if same.size == 0 and other.size == 0:
                continue  # singleton batch: nothing to pair with
            loss, g_u, g_s, g_o = cs_loss(emb[cs_loc[i]], emb[same], emb[other])
            cs_parts.append(loss)
            g_emb[cs_loc[i]] += g_u
            if same.size:
                np.add.at(g_emb, same, g_s)
            if other.size:
                np.add.at(g_emb, other, g_o)

    total = cfg.lam * math.fsum(cal_parts) + math.fsum(cs_parts)
    g_raw = backprop_normalize(raw, emb, g_emb)
    grad_w = g_raw.T @ feats
    return total, grad_w
