"""Embedding datasets: container I/O and the synthetic benchmark generator.

A dataset holds frozen pre-projection visual features, class labels,
optional group labels (evaluation-time only) and the fixed per-class text
anchors that act as classifier weights. Datasets are immutable after
load; one file per split.

On-disk container ``VLE1`` (little-endian):

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
and anything else that has no binary slot (group count, class names,
provenance). The writer always emits it; readers tolerate its absence.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .kv import read_kv, write_kv
from .rng import STAGE_DATA, stage_streams

MAGIC = b"VLE1"
VERSION = 1
_HEADER = struct.Struct("<4sIQIIII")  # 32 bytes

FLAG_GROUPS = 1
FLAG_F64 = 2

SPLIT_TAGS = ("train", "val", "test")


class ClassAnchors:
    """Fixed per-class text embeddings, stored row-wise and L2-normalized."""

    def __init__(self, vectors: np.ndarray):
        vectors = np.asarray(vectors)
        if vectors.ndim != 2 or vectors.shape[0] < 2:
            raise DataError("anchors must be a matrix with at least 2 class rows")
        if not np.all(np.isfinite(vectors)):
            raise DataError("anchors contain non-finite entries")
        norms = np.linalg.norm(vectors.astype(np.float64), axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise DataError("anchor rows must be unit-norm within 1e-6")
        self.vectors = vectors

    @classmethod
    def from_directions(cls, directions: np.ndarray) -> "ClassAnchors":
        """Normalize arbitrary nonzero class directions into anchors."""
        directions = np.asarray(directions, dtype=np.float64)
        norms = np.linalg.norm(directions, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise DataError("class direction with zero norm")
        return cls(directions / norms)

    @property
    def n_classes(self) -> int:
        return self.vectors.shape[0]

    @property
    def d_out(self) -> int:
        return self.vectors.shape[1]


@dataclass
class EmbeddingDataset:
    """One split of frozen features with labels, anchors and optional groups."""

    features: np.ndarray
    labels: np.ndarray
    anchors: ClassAnchors
    groups: np.ndarray | None = None
    split_tag: str = "train"

    def __post_init__(self):
        self.features = np.asarray(self.features)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.groups is not None:
            self.groups = np.asarray(self.groups, dtype=np.int64)
        self.validate()

    def validate(self) -> None:
        if self.features.ndim != 2:
            raise DataError("features must be a 2-d matrix")
        if self.features.dtype not in (np.float32, np.float64):
            raise DataError(f"unsupported feature dtype {self.features.dtype}")
        n = self.features.shape[0]
        if self.labels.shape != (n,):
            raise DataError("labels length does not match feature rows")
        if not np.all(np.isfinite(self.features)):
            raise DataError("features contain non-finite entries")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.anchors.n_classes):
            raise DataError("label outside [0, n_classes)")
        if self.groups is not None:
            if self.groups.shape != (n,):
                raise DataError("groups length does not match feature rows")
            if n and self.groups.min() < 0:
                raise DataError("negative group index")
        if self.split_tag not in SPLIT_TAGS:
            raise DataError(f"split_tag must be one of {SPLIT_TAGS}")

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def d_in(self) -> int:
        return self.features.shape[1]

    @property
    def d_out(self) -> int:
        return self.anchors.d_out

    @property
    def n_classes(self) -> int:
        return self.anchors.n_classes

    @property
    def n_groups(self) -> int:
        if self.groups is None:
            return 0
        return int(self.groups.max()) + 1 if self.n_samples else 0

    def without_groups(self) -> "EmbeddingDataset":
        """Training-time view: identical data, group column dropped."""
        return EmbeddingDataset(self.features, self.labels, self.anchors,
                                groups=None, split_tag=self.split_tag)


def write_dataset(ds: EmbeddingDataset, path: str | os.PathLike) -> None:
    """Serialize one split; byte-for-byte deterministic for a given dataset."""
    ds.validate()
    f64 = ds.features.dtype == np.float64
    float_dtype = "<f8" if f64 else "<f4"
    flags = (FLAG_GROUPS if ds.groups is not None else 0) | (FLAG_F64 if f64 else 0)
    header = _HEADER.pack(MAGIC, VERSION, ds.n_samples, ds.d_in, ds.d_out,
                          ds.n_classes, flags)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(ds.anchors.vectors, dtype=float_dtype).tobytes())
        fh.write(np.ascontiguousarray(ds.features, dtype=float_dtype).tobytes())
        fh.write(ds.labels.astype("<u4").tobytes())
        if ds.groups is not None:
            fh.write(ds.groups.astype("<u4").tobytes())
    meta = {"split": ds.split_tag}
    if ds.groups is not None:
        meta["n_groups"] = str(ds.n_groups)
    write_kv(str(path) + ".meta", meta)


def read_dataset(path: str | os.PathLike) -> EmbeddingDataset:
    """Read a VLE1 file back, validating magic, version, flags and payload size."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise DataError(f"{path}: truncated header")
    magic, version, n, d_in, d_out, n_classes, flags = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    if flags & ~(FLAG_GROUPS | FLAG_F64):
        raise DataError(f"{path}: unknown flag bits 0x{flags:x}")
    float_dtype = np.dtype("<f8") if flags & FLAG_F64 else np.dtype("<f4")
    fsize = float_dtype.itemsize
    n_anchor = n_classes * d_out
    n_feat = n * d_in
    expected = _HEADER.size + (n_anchor + n_feat) * fsize + n * 4
    if flags & FLAG_GROUPS:
        expected += n * 4
    if len(raw) != expected:
        kind = "truncated" if len(raw) < expected else "oversized"
        raise DataError(f"{path}: {kind} payload ({len(raw)} bytes, expected {expected})")

    off = _HEADER.size
    anchors = np.frombuffer(raw, dtype=float_dtype, count=n_anchor, offset=off)
    anchors = anchors.reshape(n_classes, d_out).astype(float_dtype.newbyteorder("="))
    off += n_anchor * fsize
    features = np.frombuffer(raw, dtype=float_dtype, count=n_feat, offset=off)
    features = features.reshape(n, d_in).astype(float_dtype.newbyteorder("="))
    off += n_feat * fsize
    labels = np.frombuffer(raw, dtype="<u4", count=n, offset=off).astype(np.int64)
    off += n * 4
    groups = None
    if flags & FLAG_GROUPS:
        groups = np.frombuffer(raw, dtype="<u4", count=n, offset=off).astype(np.int64)

    split = "train"
    meta_path = str(path) + ".meta"
    if os.path.exists(meta_path):
        split = read_kv(meta_path).get("split", "train")
    try:
        return EmbeddingDataset(features, labels, ClassAnchors(anchors),
                                groups=groups, split_tag=split)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from exc


@dataclass
class SyntheticSpec:
    """Desk-scale spurious-correlation benchmark.

    Two classes, one core direction carrying the true class signal and
    one spurious direction whose sign correlates with the class. Group
    index encodes (label, spurious sign) as ``g = 2*y + s``. The default
    train group sizes keep the 95% correlation of a well-known
    birds-over-backgrounds benchmark (majority groups are g=0 and g=3).
    """

    n_per_group: tuple[int, int, int, int] = (3498, 184, 56, 1057)
    core_separation: float = 1.0
    spurious_separation: float = 3.0
    d_in: int = 16
    d_out: int = 8
    noise_sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.n_per_group = tuple(int(v) for v in self.n_per_group)
        if len(self.n_per_group) != 4 or any(v < 1 for v in self.n_per_group):
            raise ConfigError("n_per_group must be 4 sizes, each >= 1")
        if not self.core_separation > 0:
            raise ConfigError("core_separation must be > 0")
        if self.spurious_separation < 0:
            raise ConfigError("spurious_separation must be >= 0")
        if not self.noise_sigma > 0:
            raise ConfigError("noise_sigma must be > 0")
        if self.d_in < 2:
            raise ConfigError("d_in must be >= 2 to host the core and spurious directions")
        if self.d_out < 1:
            raise ConfigError("d_out must be >= 1")


def _draw_split(spec: SyntheticSpec, counts: tuple[int, ...], anchors: ClassAnchors,
                split_tag: str, rng: np.random.Generator) -> EmbeddingDataset:
    total = sum(counts)
    feats = np.empty((total, spec.d_in), dtype=np.float64)
    labels = np.empty(total, dtype=np.int64)
    groups = np.empty(total, dtype=np.int64)
    row = 0
    for g, count in enumerate(counts):
        y, s = divmod(g, 2)
        mean = np.zeros(spec.d_in)
        mean[0] = (2 * y - 1) * spec.core_separation
        mean[1] = (2 * s - 1) * spec.spurious_separation
        feats[row:row + count] = mean + spec.noise_sigma * rng.standard_normal((count, spec.d_in))
        labels[row:row + count] = y
        groups[row:row + count] = g
        row += count
    order = rng.permutation(total)
    return EmbeddingDataset(feats[order], labels[order], anchors,
                            groups=groups[order], split_tag=split_tag)


def generate_synthetic(spec: SyntheticSpec) -> tuple[EmbeddingDataset, EmbeddingDataset, EmbeddingDataset]:
    """Generate (train, val, test) splits; a pure function of the spec.

    Train uses ``spec.n_per_group`` directly. Val and test are
    group-balanced at ``total_train // 16`` samples per group so that
    worst-group estimates on them are stable.
    """
    directions = np.zeros((2, spec.d_out))
    directions[0, 0] = -spec.core_separation
    directions[1, 0] = spec.core_separation
    anchors = ClassAnchors.from_directions(directions)

    eval_count = max(1, sum(spec.n_per_group) // 16)
    rngs = stage_streams(spec.seed, STAGE_DATA, 3)
    train = _draw_split(spec, spec.n_per_group, anchors, "train", rngs[0])
    val = _draw_split(spec, (eval_count,) * 4, anchors, "val", rngs[1])
    test = _draw_split(spec, (eval_count,) * 4, anchors, "test", rngs[2])
    return train, val, test
