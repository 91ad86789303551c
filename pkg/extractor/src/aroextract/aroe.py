"""Writer (and self-check reader) for the AROE embedding file format.

Wire format, little-endian throughout:

    header  "<4sIBIQ": magic b"AROE", version=1, kind (0 image / 1 text),
            dim (u32), count (u64)
    payload count * dim float32, row-major

Row ids live in a JSON Lines sidecar at ``<path>.manifest.jsonl``, one
``{"index": i, "id": ..., "kind": "image"|"text"}`` object per row in
payload order. Both files are written to temporaries and moved into place,
so readers never observe a half-written pair.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ManifestError

MAGIC = b"AROE"
VERSION = 1
HEADER = struct.Struct("<4sIBIQ")
KIND_CODES = {"image": 0, "text": 1}


def manifest_path(path: str | Path) -> Path:
    return Path(str(path) + ".manifest.jsonl")


def write_embeddings(
    path: str | Path, ids: Sequence[str], vectors: np.ndarray, kind: str
) -> None:
    if kind not in KIND_CODES:
        raise ManifestError(f"kind must be 'image' or 'text', got {kind!r}")
    rows = np.ascontiguousarray(vectors, dtype="<f4")
    if rows.ndim != 2:
        raise ManifestError(f"vectors must be 2-D, got shape {rows.shape}")
    if rows.shape[0] != len(ids):
        raise ManifestError(f"{len(ids)} ids but {rows.shape[0]} vector rows")
    if len(set(ids)) != len(ids):
        raise ManifestError("duplicate ids in embedding set")

    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp_manifest = manifest_path(tmp)
    with open(tmp, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, KIND_CODES[kind], rows.shape[1], rows.shape[0]))
        fh.write(rows.tobytes())
    with open(tmp_manifest, "w", encoding="utf-8") as fh:
        for i, item_id in enumerate(ids):
            fh.write(json.dumps({"index": i, "id": item_id, "kind": kind}, sort_keys=True) + "\n")
    os.replace(tmp, path)
    os.replace(tmp_manifest, manifest_path(path))


def read_embeddings(path: str | Path) -> tuple[list[str], np.ndarray, str]:
    """Self-check reader; the core toolkit remains the reference consumer."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < HEADER.size:
        raise ManifestError(f"{path}: truncated header")
    magic, version, kind_code, dim, count = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ManifestError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ManifestError(f"{path}: unsupported version {version}")
    kinds = {code: label for label, code in KIND_CODES.items()}
    if kind_code not in kinds:
        raise ManifestError(f"{path}: unknown kind code {kind_code}")
    if len(raw) != HEADER.size + 4 * dim * count:
        raise ManifestError(f"{path}: payload size disagrees with header")
    vectors = np.frombuffer(raw, dtype="<f4", offset=HEADER.size).reshape(count, dim).copy()

    ids: list[str] = []
    with open(manifest_path(path), "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                index, item_id = int(rec["index"]), str(rec["id"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ManifestError(f"{path}: bad manifest line {lineno}") from exc
            if index != len(ids):
                raise ManifestError(f"{path}: manifest index {index} out of order")
            ids.append(item_id)
    if len(ids) != count:
        raise ManifestError(f"{path}: {len(ids)} manifest rows for {count} payload rows")
    return ids, vectors, kinds[kind_code]
