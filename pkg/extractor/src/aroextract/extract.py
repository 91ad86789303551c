"""Extraction jobs: manifest in, one AROE file out."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .aroe import write_embeddings
from .encoders import Encoder
from .errors import ManifestError, UsageError
from .manifest import read_image_manifest, read_text_manifest


@dataclass
class ExtractionJob:
    model_id: str
    kind: str  # "image" | "text"
    manifest: Path
    out: Path
    batch_size: int = 16

    def __post_init__(self) -> None:
        if self.kind not in ("image", "text"):
            raise UsageError(f"kind must be 'image' or 'text', got {self.kind!r}")
        if self.batch_size < 1:
            raise UsageError(f"batch size must be >= 1, got {self.batch_size}")
        self.manifest = Path(self.manifest)
        self.out = Path(self.out)


@dataclass
class ExtractionResult:
    written: int
    skipped: list[str] = field(default_factory=list)  # unreadable image ids


def _batches(items, size):
    return [items[i : i + size] for i in range(0, len(items), size)]


def extract_text_embeddings(job: ExtractionJob, encoder: Encoder) -> ExtractionResult:
    items = read_text_manifest(job.manifest)
    blocks = [
        encoder.encode_texts([it.text for it in batch])
        for batch in _batches(items, job.batch_size)
    ]
    vectors = np.vstack(blocks) if blocks else np.zeros((0, encoder.dim), dtype=np.float32)
    write_embeddings(job.out, [it.item_id for it in items], vectors, "text")
    return ExtractionResult(written=len(items))


def extract_image_embeddings(job: ExtractionJob, encoder: Encoder) -> ExtractionResult:
    items = read_image_manifest(job.manifest)
    kept, skipped, loaded = [], [], []
    for item in items:
        try:
            with Image.open(item.path) as img:
                loaded.append(img.convert("RGB"))
        except (OSError, UnidentifiedImageError) as exc:
            print(f"skipping {item.item_id}: {exc}", file=sys.stderr)
            skipped.append(item.item_id)
            continue
        kept.append(item)
    blocks = [
        encoder.encode_images([img for img in batch])
        for batch in _batches(loaded, job.batch_size)
    ]
    vectors = np.vstack(blocks) if blocks else np.zeros((0, encoder.dim), dtype=np.float32)
    write_embeddings(job.out, [it.item_id for it in kept], vectors, "image")
    return ExtractionResult(written=len(kept), skipped=skipped)


def run(job: ExtractionJob, encoder: Encoder) -> ExtractionResult:
    if job.kind == "text":
        return extract_text_embeddings(job, encoder)
    return extract_image_embeddings(job, encoder)
