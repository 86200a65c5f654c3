"""Group-wise evaluation: per-group accuracy, worst-group and average
accuracy, plus report/embedding emission helpers.

Group labels are consulted here and only here — training never sees
them; its dataset view drops the group column.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import EmbeddingDataset
from .errors import DataError
from .head import ClassifierConfig, ProjectionHead, forward_batch, predict
from .kv import write_kv


@dataclass
class GroupMetrics:
    per_group: dict[int, tuple[int, int, float]]  # group -> (correct, total, accuracy)
    wga: float
    avg: float


def evaluate(head: ProjectionHead, ds: EmbeddingDataset,
             cfg: ClassifierConfig | None = None) -> GroupMetrics:
    """Exact integer tally of predictions per group; wga = min accuracy."""
    cfg = cfg or ClassifierConfig()
    if ds.n_samples == 0:
        raise DataError("cannot evaluate an empty dataset")
    if ds.groups is None:
        raise DataError("dataset carries no group labels; evaluation needs them")
    preds = predict(head, ds, cfg)
    correct = preds == ds.labels
    per_group: dict[int, tuple[int, int, float]] = {}
    for g in np.unique(ds.groups):
        in_g = ds.groups == g
        total = int(in_g.sum())
        good = int(correct[in_g].sum())
        per_group[int(g)] = (good, total, good / total)
    wga = min(acc for _, _, acc in per_group.values())
    avg = int(correct.sum()) / ds.n_samples
    return GroupMetrics(per_group, wga, avg)


def metrics_pairs(m: GroupMetrics) -> dict[str, str]:
    """Flatten to `key = value` pairs for the report writer."""
    pairs = {"wga": repr(m.wga), "avg": repr(m.avg)}
    for g in sorted(m.per_group):
        good, total, acc = m.per_group[g]
        pairs[f"group_{g}_correct"] = str(good)
        pairs[f"group_{g}_total"] = str(total)
        pairs[f"group_{g}_acc"] = repr(acc)
    return pairs


def write_metrics_report(m: GroupMetrics, path) -> None:
    write_kv(path, metrics_pairs(m))


def write_group_table(m: GroupMetrics, path) -> None:
    """Tab-separated per-group table (machine-readable companion)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("group\tcorrect\ttotal\taccuracy\n")
        for g in sorted(m.per_group):
            good, total, acc = m.per_group[g]
            fh.write(f"{g}\t{good}\t{total}\t{acc!r}\n")


def export_embeddings(head: ProjectionHead, ds: EmbeddingDataset, path,
                      cfg: ClassifierConfig | None = None) -> None:
    """Tab-separated rows: index, label, group (-1 if absent), then the
    d_out embedding of each sample under the given head."""
    cfg = cfg or ClassifierConfig()
    emb = forward_batch(head, ds.features, cfg)
    groups = ds.groups if ds.groups is not None else np.full(ds.n_samples, -1)
    with open(path, "w", encoding="utf-8") as fh:
        cols = "\t".join(f"e{j}" for j in range(head.d_out))
        fh.write(f"index\tlabel\tgroup\t{cols}\n")
        for i in range(ds.n_samples):
            vals = "\t".join(repr(float(v)) for v in emb[i])
            fh.write(f"{i}\t{int(ds.labels[i])}\t{int(groups[i])}\t{vals}\n")
