"""Standalone writers for the embedding-container and head file formats.

The recalibration tooling consumes two little-endian binary formats, and
this module reproduces them byte for byte without importing that package
(the two projects are coupled only through the files themselves).

Embedding container ``VLE1``:

    bytes 0-3   magic b"VLE1"
    u32         version, currently 1
    u64         n_samples
    u32         d_in
    u32         d_out
    u32         n_classes
    u32         flags  (bit0: groups present, bit1: payload is f64, else f32)
    floats      anchors,  n_classes * d_out, row-major
    floats      features, n_samples * d_in, row-major
    u32[]       labels,   n_samples
    u32[]       groups,   n_samples, only if flags bit0

A ``<file>.meta`` sidecar in ``key = value`` form carries the split tag
and the group count. The exporter always writes f32 payloads (checkpoint
activations are single precision) and always writes groups.

Projection-head file ``PRJ1``: magic b"PRJ1", u32 d_in, u32 d_out, then
d_out*d_in f32 weights row-major.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .errors import ManifestError

VLE_MAGIC = b"VLE1"
VLE_VERSION = 1
_VLE_HEADER = struct.Struct("<4sIQIIII")  # 32 bytes

FLAG_GROUPS = 1
FLAG_F64 = 2

HEAD_MAGIC = b"PRJ1"
_HEAD_HEADER = struct.Struct("<4sII")

SPLIT_TAGS = ("train", "val", "test")

ANCHOR_NORM_TOL = 1e-6


def format_kv(pairs: dict[str, str]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in pairs.items())


def write_kv(path: str | os.PathLike, pairs: dict[str, str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_kv(pairs))


def _check_anchors(anchors: np.ndarray) -> np.ndarray:
    anchors = np.asarray(anchors)
    if anchors.ndim != 2 or anchors.shape[0] < 2:
        raise ManifestError("anchors must be a matrix with at least 2 class rows")
    if not np.all(np.isfinite(anchors)):
        raise ManifestError("anchors contain non-finite entries")
    norms = np.linalg.norm(anchors.astype(np.float64), axis=1)
    if np.any(np.abs(norms - 1.0) > ANCHOR_NORM_TOL):
        raise ManifestError(f"anchor rows must be unit-norm within {ANCHOR_NORM_TOL}")
    return anchors


def write_embedding_file(path: str | os.PathLike,
                         anchors: np.ndarray,
                         features: np.ndarray,
                         labels: np.ndarray,
                         groups: np.ndarray,
                         split: str) -> None:
    """Serialize one split as a VLE1 file (f32 payload) plus its sidecar."""
    anchors = _check_anchors(anchors)
    features = np.asarray(features)
    labels = np.asarray(labels)
    groups = np.asarray(groups)
    if split not in SPLIT_TAGS:
        raise ManifestError(f"split must be one of {SPLIT_TAGS}, got {split!r}")
    if features.ndim != 2:
        raise ManifestError("features must be a 2-d matrix")
    if not np.all(np.isfinite(features)):
        raise ManifestError("features contain non-finite entries")
    n = features.shape[0]
    n_classes, d_out = anchors.shape
    if labels.shape != (n,) or groups.shape != (n,):
        raise ManifestError("labels/groups length does not match feature rows")
    if n and (labels.min() < 0 or labels.max() >= n_classes):
        raise ManifestError("label outside [0, n_classes)")
    if n and groups.min() < 0:
        raise ManifestError("negative group index")

    flags = FLAG_GROUPS  # always f32, groups always present
    header = _VLE_HEADER.pack(VLE_MAGIC, VLE_VERSION, n,
                              features.shape[1], d_out, n_classes, flags)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(anchors, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(features, dtype="<f4").tobytes())
        fh.write(labels.astype("<u4").tobytes())
        fh.write(groups.astype("<u4").tobytes())
    n_groups = int(groups.max()) + 1 if n else 0
    write_kv(str(path) + ".meta", {"split": split, "n_groups": str(n_groups)})


def write_head_file(path: str | os.PathLike, weight: np.ndarray) -> None:
    """Serialize a projection weight matrix (d_out x d_in) as a PRJ1 file."""
    weight = np.asarray(weight)
    if weight.ndim != 2:
        raise ManifestError("projection weight must be a 2-d matrix")
    if not np.all(np.isfinite(weight)):
        raise ManifestError("projection weight contains non-finite entries")
    d_out, d_in = weight.shape
    with open(path, "wb") as fh:
        fh.write(_HEAD_HEADER.pack(HEAD_MAGIC, d_in, d_out))
        fh.write(np.ascontiguousarray(weight, dtype="<f4").tobytes())
