"""Input manifests: JSON Lines, one item per row.

Image rows:  {"id": "...", "path": "relative/or/absolute.png"}
Text rows:   {"id": "...", "text": "a caption"}; "id" defaults to the text
             itself, matching the core's convention of keying caption
             embeddings by exact string.

Relative image paths resolve against the manifest's directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ManifestError


@dataclass(frozen=True)
class ImageItem:
    item_id: str
    path: Path


@dataclass(frozen=True)
class TextItem:
    item_id: str
    text: str


def _rows(path: Path):
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}:{lineno}: invalid JSON") from exc
        if not isinstance(rec, dict):
            raise ManifestError(f"{path}:{lineno}: expected an object")
        yield lineno, rec


def read_image_manifest(path: str | Path) -> list[ImageItem]:
    path = Path(path)
    items: list[ImageItem] = []
    seen: set[str] = set()
    for lineno, rec in _rows(path):
        try:
            item_id, rel = str(rec["id"]), str(rec["path"])
        except KeyError as exc:
            raise ManifestError(f"{path}:{lineno}: missing key {exc}") from None
        if item_id in seen:
            raise ManifestError(f"{path}:{lineno}: duplicate id {item_id!r}")
        seen.add(item_id)
        img_path = Path(rel)
        if not img_path.is_absolute():
            img_path = path.parent / img_path
        items.append(ImageItem(item_id=item_id, path=img_path))
    return items


def read_text_manifest(path: str | Path) -> list[TextItem]:
    path = Path(path)
    items: list[TextItem] = []
    seen_ids: set[str] = set()
    seen_texts: set[str] = set()
    for lineno, rec in _rows(path):
        if "text" not in rec:
            raise ManifestError(f"{path}:{lineno}: missing key 'text'")
        text = str(rec["text"])
        if not text.strip():
            raise ManifestError(f"{path}:{lineno}: empty caption")
        # Duplicate strings are an upstream bug: the core de-duplicates
        # captions before asking for embeddings.
        if text in seen_texts:
            raise ManifestError(f"{path}:{lineno}: duplicate caption {text!r}")
        seen_texts.add(text)
        item_id = str(rec.get("id", text))
        if item_id in seen_ids:
            raise ManifestError(f"{path}:{lineno}: duplicate id {item_id!r}")
        seen_ids.add(item_id)
        items.append(TextItem(item_id=item_id, text=text))
    return items
