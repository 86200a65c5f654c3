"""Feature encoders: how images and prompts become vectors.

A checkpoint id fixes the geometry of the export — the width of the
pooled pre-projection visual feature (``feature_dim``, the container's
d_in) and the joint embedding width shared by the projection output and
the text anchors (``embed_dim``, the container's d_out):

    resnet50-class   2048 -> 1024, attention-pooled trunk activations
    vit-class        1024 ->  768, pooled pre-projection token embedding

Two backends produce the actual numbers:

``stub``
    No model at all: every vector is drawn from a PCG64 stream seeded by
    a SHA-256 digest of the image bytes (or prompt text, or checkpoint
    id for the projection). Deterministic across processes and machines,
    and ideal for exercising the downstream pipeline without checkpoint
    assets. The vectors carry no visual information.

``hf-clip``
    Runs a local ``transformers`` CLIP checkpoint through its published
    inference interface. Features are the vision tower's pooled output
    *before* the visual projection; the projection weight itself is
    exported as the head file; anchors come from the text tower in the
    joint space. Preprocessing (resize, center-crop, normalize) is
    delegated to the checkpoint's own saved image processor. Only ViT
    vision towers exist in transformers, so ``resnet50-class`` is
    refused by this backend.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import AssetError, ManifestError

_IMAGE_BATCH = 16


@dataclass(frozen=True)
class CheckpointSpec:
    name: str
    feature_dim: int   # pooled pre-projection width (container d_in)
    embed_dim: int     # joint embedding width (container d_out)
    input_size: int    # nominal square input resolution


CHECKPOINTS: dict[str, CheckpointSpec] = {
    "resnet50-class": CheckpointSpec("resnet50-class", 2048, 1024, 224),
    "vit-class": CheckpointSpec("vit-class", 1024, 768, 336),
}


class StubEncoder:
    """Content-addressed pseudo-features; no checkpoint required."""

    def __init__(self, spec: CheckpointSpec):
        self.spec = spec

    @staticmethod
    def _rng(tag: bytes) -> np.random.Generator:
        digest = hashlib.sha256(tag).digest()[:8]
        return np.random.default_rng(int.from_bytes(digest, "little"))

    def encode_images(self, paths: Sequence[Path]) -> np.ndarray:
        rows = np.empty((len(paths), self.spec.feature_dim), dtype=np.float32)
        for i, path in enumerate(paths):
            try:
                payload = Path(path).read_bytes()
            except OSError as exc:
                raise AssetError(f"cannot read image {path}: {exc}") from exc
            rng = self._rng(b"image:" + payload)
            rows[i] = rng.standard_normal(self.spec.feature_dim).astype(np.float32)
        return rows

    def encode_prompts(self, prompts: Sequence[str]) -> np.ndarray:
        rows = np.empty((len(prompts), self.spec.embed_dim), dtype=np.float32)
        for i, prompt in enumerate(prompts):
            rng = self._rng(b"prompt:" + prompt.encode("utf-8"))
            rows[i] = rng.standard_normal(self.spec.embed_dim).astype(np.float32)
        return rows

    def projection_weight(self) -> np.ndarray:
        rng = self._rng(b"projection:" + self.spec.name.encode("utf-8"))
        scale = 1.0 / np.sqrt(self.spec.feature_dim)
        w = scale * rng.standard_normal((self.spec.embed_dim, self.spec.feature_dim))
        return w.astype(np.float32)


class HfClipEncoder:
    """A local transformers CLIP checkpoint behind the encoder interface."""

    def __init__(self, spec: CheckpointSpec, checkpoint_path: Path):
        if spec.name == "resnet50-class":
            raise AssetError(
                "checkpoint 'resnet50-class' is a ResNet architecture; the "
                "hf-clip backend only runs ViT checkpoints — use the stub "
                "backend for resnet50-class exports")
        try:
            import torch
            from PIL import Image
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise AssetError(
                "backend hf-clip needs torch, transformers and pillow "
                f"(pip install 'clip-exporter[hf]'): {exc}") from exc
        self._torch = torch
        self._image_cls = Image
        self.spec = spec
        try:
            self.model = CLIPModel.from_pretrained(checkpoint_path).eval()
        except (OSError, ValueError, EnvironmentError) as exc:
            raise AssetError(f"cannot load checkpoint at {checkpoint_path}: "
                             f"{exc}") from exc
        vision_width = self.model.config.vision_config.hidden_size
        joint_width = self.model.config.projection_dim
        if (vision_width, joint_width) != (spec.feature_dim, spec.embed_dim):
            raise AssetError(
                f"checkpoint mismatch: {spec.name} expects "
                f"{spec.feature_dim} -> {spec.embed_dim}, but the checkpoint "
                f"at {checkpoint_path} has {vision_width} -> {joint_width}")
        if self.model.visual_projection.bias is not None:
            raise AssetError("checkpoint visual projection carries a bias "
                             "term, which the head file cannot represent")
        try:
            self.processor = CLIPProcessor.from_pretrained(checkpoint_path)
        except (OSError, ValueError, EnvironmentError) as exc:
            raise AssetError(f"cannot load preprocessing pipeline at "
                             f"{checkpoint_path}: {exc}") from exc

    def _open(self, path: Path):
        try:
            with self._image_cls.open(path) as img:
                return img.convert("RGB")
        except (OSError, ValueError) as exc:
            raise AssetError(f"unreadable image {path}: {exc}") from exc

    def encode_images(self, paths: Sequence[Path]) -> np.ndarray:
        chunks = []
        with self._torch.inference_mode():
            for start in range(0, len(paths), _IMAGE_BATCH):
                batch = [self._open(p) for p in paths[start:start + _IMAGE_BATCH]]
                pixels = self.processor(images=batch,
                                        return_tensors="pt").pixel_values
                pooled = self.model.vision_model(pixel_values=pixels).pooler_output
                chunks.append(pooled.cpu().numpy().astype(np.float32))
        if not chunks:
            return np.empty((0, self.spec.feature_dim), dtype=np.float32)
        return np.vstack(chunks)

    def encode_prompts(self, prompts: Sequence[str]) -> np.ndarray:
        with self._torch.inference_mode():
            enc = self.processor(text=list(prompts), padding=True,
                                 return_tensors="pt")
            pooled = self.model.text_model(
                input_ids=enc.input_ids,
                attention_mask=enc.attention_mask).pooler_output
            joint = self.model.text_projection(pooled)
        return joint.cpu().numpy().astype(np.float32)

    def projection_weight(self) -> np.ndarray:
        w = self.model.visual_projection.weight.detach().cpu().numpy()
        return np.array(w, dtype=np.float32)


def make_encoder(checkpoint: str, backend: str,
                 checkpoint_path: Path | None = None):
    """Instantiate the encoder a manifest asks for."""
    spec = CHECKPOINTS.get(checkpoint)
    if spec is None:
        raise ManifestError(f"unknown checkpoint {checkpoint!r}; "
                            f"expected one of {tuple(CHECKPOINTS)}")
    if backend == "stub":
        return StubEncoder(spec)
    if backend == "hf-clip":
        if checkpoint_path is None:
            raise ManifestError("backend hf-clip requires checkpoint_path")
        return HfClipEncoder(spec, Path(checkpoint_path))
    raise ManifestError(f"unknown backend {backend!r}")
