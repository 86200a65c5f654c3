"""Export manifests: what to encode, with which checkpoint, into which files.

A manifest is a ``key = value`` text file. Relative paths inside it are
resolved against the manifest's own directory, so a manifest can travel
with its dataset. Recognized keys:

    dataset          one of: waterbirds, celeba, chexpert, metashift,
                     cmnist, custom
    checkpoint       one of the registered checkpoint ids (see backends)
    backend          stub (default) or hf-clip
    checkpoint_path  local checkpoint directory, required for hf-clip
    image_root       directory that split-file paths are relative to
    prompt_template  text template containing "{class}"
                     (default "a photo of a {class}")
    classes          comma-separated class names; optional for the known
                     datasets (they carry defaults), required for custom
    split.train      per-split listing file (at least one split required)
    split.val
    split.test
    out_dir          existing directory that receives the output files

A split listing is a tab-separated text file with one image per line:
``relative/path<TAB>label<TAB>group``. Blank lines and ``#`` comments are
ignored. Labels index into the class list; groups are arbitrary
non-negative ids (conventionally ``2*label + spurious_attribute`` for the
binary benchmark datasets). Output row order follows the listing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import ManifestError

# Default class names for the datasets whose label semantics are fixed.
KNOWN_CLASSES: dict[str, tuple[str, ...]] = {
    "waterbirds": ("landbird", "waterbird"),
    "celeba": ("non-blond hair", "blond hair"),
    "chexpert": ("no finding", "finding"),
    "metashift": ("cat", "dog"),
    "cmnist": ("digit below five", "digit five or above"),
}

DATASETS = tuple(KNOWN_CLASSES) + ("custom",)
BACKENDS = ("stub", "hf-clip")
SPLITS = ("train", "val", "test")

DEFAULT_TEMPLATE = "a photo of a {class}"

_REQUIRED_KEYS = ("dataset", "checkpoint", "image_root", "out_dir")
_KNOWN_KEYS = set(_REQUIRED_KEYS) | {
    "backend", "checkpoint_path", "prompt_template", "classes",
} | {f"split.{s}" for s in SPLITS}


@dataclass(frozen=True)
class SplitEntry:
    """One image row from a split listing."""

    path: str
    label: int
    group: int


@dataclass
class ExportManifest:
    dataset: str
    checkpoint: str
    image_root: Path
    out_dir: Path
    splits: dict[str, Path]
    classes: tuple[str, ...]
    prompt_template: str = DEFAULT_TEMPLATE
    backend: str = "stub"
    checkpoint_path: Path | None = None

    def __post_init__(self):
        from .backends import CHECKPOINTS  # geometry registry lives with the encoders

        if self.dataset not in DATASETS:
            raise ManifestError(f"unknown dataset {self.dataset!r}; "
                                f"expected one of {DATASETS}")
        if self.checkpoint not in CHECKPOINTS:
            raise ManifestError(f"unknown checkpoint {self.checkpoint!r}; "
                                f"expected one of {tuple(CHECKPOINTS)}")
        if self.backend not in BACKENDS:
            raise ManifestError(f"unknown backend {self.backend!r}; "
                                f"expected one of {BACKENDS}")
        if self.backend == "hf-clip" and self.checkpoint_path is None:
            raise ManifestError("backend hf-clip requires checkpoint_path")
        if "{class}" not in self.prompt_template:
            raise ManifestError('prompt_template must contain "{class}"')
        if not self.splits:
            raise ManifestError("at least one split.* listing is required")
        for name in self.splits:
            if name not in SPLITS:
                raise ManifestError(f"unknown split {name!r}; expected one of {SPLITS}")
        self.classes = tuple(str(c) for c in self.classes)
        if any(not c.strip() for c in self.classes):
            raise ManifestError("empty class name")
        if len(self.classes) < 2:
            raise ManifestError("at least 2 classes are required")
        expected = KNOWN_CLASSES.get(self.dataset)
        if expected is not None and len(self.classes) != len(expected):
            raise ManifestError(
                f"dataset {self.dataset!r} has {len(expected)} classes, "
                f"got {len(self.classes)} names")

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def prompts(self) -> tuple[str, ...]:
        """One anchor prompt per class, rendered from the template."""
        return tuple(self.prompt_template.format(**{"class": c})
                     for c in self.classes)


def _read_pairs(path: Path) -> dict[str, str]:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ManifestError(f"{path}:{lineno}: expected 'key = value', "
                                f"got {stripped!r}")
        key, _, value = stripped.partition("=")
        pairs[key.strip()] = value.strip()
    return pairs


def load_manifest(path: str | Path) -> ExportManifest:
    """Parse and validate a manifest file."""
    path = Path(path)
    pairs = _read_pairs(path)
    unknown = sorted(set(pairs) - _KNOWN_KEYS)
    if unknown:
        raise ManifestError(f"unknown manifest key {unknown[0]!r}")
    missing = [k for k in _REQUIRED_KEYS if k not in pairs]
    if missing:
        raise ManifestError(f"missing manifest key {missing[0]!r}")

    base = path.parent

    def resolve(value: str) -> Path:
        p = Path(value)
        return p if p.is_absolute() else base / p

    dataset = pairs["dataset"]
    if dataset not in DATASETS:
        raise ManifestError(f"unknown dataset {dataset!r}; "
                            f"expected one of {DATASETS}")
    if "classes" in pairs:
        classes = tuple(c.strip() for c in pairs["classes"].split(","))
    elif dataset in KNOWN_CLASSES:
        classes = KNOWN_CLASSES[dataset]
    else:
        raise ManifestError("dataset 'custom' requires a classes key")

    splits = {s: resolve(pairs[f"split.{s}"])
              for s in SPLITS if f"split.{s}" in pairs}

    return ExportManifest(
        dataset=dataset,
        checkpoint=pairs["checkpoint"],
        backend=pairs.get("backend", "stub"),
        checkpoint_path=(resolve(pairs["checkpoint_path"])
                         if "checkpoint_path" in pairs else None),
        image_root=resolve(pairs["image_root"]),
        prompt_template=pairs.get("prompt_template", DEFAULT_TEMPLATE),
        classes=classes,
        splits=splits,
        out_dir=resolve(pairs["out_dir"]),
    )


def parse_split_file(path: str | Path) -> list[SplitEntry]:
    """Read a tab-separated split listing into entries, preserving order."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read split listing {path}: {exc}") from exc
    entries: list[SplitEntry] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = stripped.split("\t")
        if len(fields) != 3:
            raise ManifestError(f"{path}:{lineno}: expected 'path<TAB>label"
                                f"<TAB>group', got {len(fields)} fields")
        rel, label_s, group_s = fields
        try:
            label = int(label_s)
            group = int(group_s)
        except ValueError as exc:
            raise ManifestError(f"{path}:{lineno}: non-integer label/group") from exc
        if label < 0:
            raise ManifestError(f"{path}:{lineno}: negative label")
        if group < 0:
            raise ManifestError(f"{path}:{lineno}: negative group")
        entries.append(SplitEntry(rel, label, group))
    return entries
