"""Line-oriented ``key = value`` text files.

Used for dataset sidecars, config files, resolved-config echoes and
metrics reports. Blank lines and lines starting with ``#`` are ignored.
Keys keep their insertion order on write so output files are
byte-for-byte reproducible.
"""

from __future__ import annotations

import os

from .errors import DataError


def format_kv(pairs: dict[str, str]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in pairs.items())


def write_kv(path: str | os.PathLike, pairs: dict[str, str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_kv(pairs))


def read_kv(path: str | os.PathLike) -> dict[str, str]:
    pairs: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise DataError(f"{path}:{lineno}: expected 'key = value', got {stripped!r}")
            key, _, value = stripped.partition("=")
            pairs[key.strip()] = value.strip()
    return pairs
