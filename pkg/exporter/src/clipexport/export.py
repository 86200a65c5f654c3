"""The export pipeline: manifest in, VLE1 splits + PRJ1 head + report out.

Steps, in order:

1. Parse every split listing, range-check labels against the class list,
   resolve image paths against ``image_root`` and verify they all exist.
2. Build the requested encoder (stub or hf-clip).
3. Encode the class prompts, L2-normalize them in float64 and store the
   rows as the container's class anchors.
4. Encode each split's images in listing order and write one VLE1 file
   per split, carrying labels and group ids.
5. Write the checkpoint's projection weight as ``projection.prj1`` and a
   ``key = value`` report with per-split sizes and group histograms.

Everything is deterministic given the manifest, the image bytes and the
checkpoint: two runs produce byte-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backends import CHECKPOINTS, make_encoder
from .errors import AssetError, ManifestError
from .formats import write_embedding_file, write_head_file, write_kv
from .manifest import SPLITS, ExportManifest, SplitEntry, parse_split_file

_MISSING_SHOWN = 5


def group_histogram(entries: list[SplitEntry]) -> list[int]:
    """Per-group sample counts, indexed by group id (0 .. max id)."""
    if not entries:
        return []
    groups = np.array([e.group for e in entries])
    return np.bincount(groups, minlength=int(groups.max()) + 1).tolist()


@dataclass
class SplitPlan:
    """One split, parsed and resolved, ready to encode."""

    name: str
    entries: list[SplitEntry]
    paths: list[Path]

    @property
    def labels(self) -> np.ndarray:
        return np.array([e.label for e in self.entries], dtype=np.int64)

    @property
    def groups(self) -> np.ndarray:
        return np.array([e.group for e in self.entries], dtype=np.int64)


@dataclass
class ExportResult:
    out_dir: Path
    split_files: dict[str, Path]
    head_file: Path
    report_file: Path
    group_counts: dict[str, list[int]]


def plan_export(manifest: ExportManifest) -> list[SplitPlan]:
    """Validate listings and image paths; return the per-split work."""
    if not manifest.out_dir.is_dir():
        raise AssetError(f"output directory {manifest.out_dir} does not exist")
    if manifest.backend == "hf-clip" and not manifest.checkpoint_path.exists():
        raise AssetError(f"checkpoint path {manifest.checkpoint_path} "
                         "does not exist")
    plans: list[SplitPlan] = []
    for name in SPLITS:
        if name not in manifest.splits:
            continue
        entries = parse_split_file(manifest.splits[name])
        if not entries:
            raise ManifestError(f"split {name!r} lists no images")
        bad = next((e for e in entries if e.label >= manifest.n_classes), None)
        if bad is not None:
            raise ManifestError(
                f"split {name!r}: label {bad.label} out of range for "
                f"{manifest.n_classes} classes ({bad.path})")
        paths = [manifest.image_root / e.path for e in entries]
        missing = [p for p in paths if not p.is_file()]
        if missing:
            shown = ", ".join(str(p) for p in missing[:_MISSING_SHOWN])
            raise AssetError(f"split {name!r}: {len(missing)} missing "
                             f"image(s), e.g. {shown}")
        plans.append(SplitPlan(name, entries, paths))
    return plans


def _normalized_anchors(raw: np.ndarray) -> np.ndarray:
    """Row-normalize prompt embeddings in f64; reject degenerate rows."""
    raw = np.asarray(raw, dtype=np.float64)
    if not np.all(np.isfinite(raw)):
        raise AssetError("prompt embedding contains non-finite entries")
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise AssetError("prompt embedding with zero norm")
    return (raw / norms).astype(np.float32)


def run_export(manifest: ExportManifest) -> ExportResult:
    """Execute the full export; returns the written paths and counts."""
    plans = plan_export(manifest)
    encoder = make_encoder(manifest.checkpoint, manifest.backend,
                           manifest.checkpoint_path)
    anchors = _normalized_anchors(encoder.encode_prompts(manifest.prompts))

    split_files: dict[str, Path] = {}
    group_counts: dict[str, list[int]] = {}
    for plan in plans:
        features = encoder.encode_images(plan.paths)
        out_path = manifest.out_dir / f"{plan.name}.vle"
        write_embedding_file(out_path, anchors, features,
                             plan.labels, plan.groups, split=plan.name)
        split_files[plan.name] = out_path
        group_counts[plan.name] = group_histogram(plan.entries)

    head_file = manifest.out_dir / "projection.prj1"
    write_head_file(head_file, encoder.projection_weight())

    spec = CHECKPOINTS[manifest.checkpoint]
    report: dict[str, str] = {
        "dataset": manifest.dataset,
        "checkpoint": manifest.checkpoint,
        "backend": manifest.backend,
        "feature_dim": str(spec.feature_dim),
        "embed_dim": str(spec.embed_dim),
        "n_classes": str(manifest.n_classes),
        "classes": ",".join(manifest.classes),
    }
    for plan in plans:
        report[f"{plan.name}.n"] = str(len(plan.entries))
        report[f"{plan.name}.groups"] = ",".join(
            str(c) for c in group_counts[plan.name])
    report_file = manifest.out_dir / "export_report.txt"
    write_kv(report_file, report)

    return ExportResult(manifest.out_dir, split_files, head_file,
                        report_file, group_counts)
