"""Typed errors for the export pipeline.

Two failure families matter to callers: the manifest (or the metadata it
points at) is malformed, or an external asset (image file, checkpoint)
is missing or unusable. The CLI maps them to distinct exit codes.
"""

from __future__ import annotations


class ClipExportError(Exception):
    """Base class for all errors raised by this package."""


class ManifestError(ClipExportError):
    """The manifest or a split listing is malformed or inconsistent."""


class AssetError(ClipExportError):
    """An external asset (image, checkpoint, output directory) is unusable."""
