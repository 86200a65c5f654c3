"""clip-exporter: turn an image dataset plus a CLIP checkpoint into
frozen-embedding files for last-layer recalibration.

The package reads a ``key = value`` manifest describing a dataset (image
paths, labels, group ids per split), encodes every image to its pooled
pre-projection visual feature, encodes one prompt per class to a
normalized text anchor, and writes one VLE1 container per split plus the
checkpoint's projection weights as a PRJ1 head file — the exact binary
formats the recalibration tooling trains from.
"""

from .backends import (CHECKPOINTS, CheckpointSpec, HfClipEncoder,
                       StubEncoder, make_encoder)
from .errors import AssetError, ClipExportError, ManifestError
from .export import (ExportResult, SplitPlan, group_histogram, plan_export,
                     run_export)
from .formats import write_embedding_file, write_head_file
from .manifest import (DATASETS, KNOWN_CLASSES, ExportManifest, SplitEntry,
                       load_manifest, parse_split_file)

__version__ = "0.1.0"

__all__ = [
    "AssetError", "CHECKPOINTS", "CheckpointSpec", "ClipExportError",
    "DATASETS", "ExportManifest", "ExportResult", "HfClipEncoder",
    "KNOWN_CLASSES", "ManifestError", "SplitEntry", "SplitPlan",
    "StubEncoder", "__version__", "group_histogram", "load_manifest",
    "make_encoder", "parse_split_file", "plan_export", "run_export",
    "write_embedding_file", "write_head_file",
]
