"""Embedding persistence, cosine similarity, and exact nearest neighbors.

File format ("AROE", version 1), little-endian throughout:

    bytes 0..3   magic "AROE"
    bytes 4..7   u32 version = 1
    byte  8      u8 kind (0 = image, 1 = text)
    bytes 9..12  u32 dim
    bytes 13..20 u64 count
    then         count * dim float32 values, row-major

A sidecar manifest at ``<path>.manifest.jsonl`` holds one line per row:
``{"index": i, "id": "...", "kind": "image"|"text"}``. Splitting ids out of
the binary keeps vector loading free of string parsing.

Vectors are stored in 32 bits; all similarity math accumulates in 64 bits.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataFormatError, NumericalError

MAGIC = b"AROE"
VERSION = 1
_HEADER = struct.Struct("<4sIBIQ")


class Kind(Enum):
    IMAGE = 0
    TEXT = 1

    @property
    def label(self) -> str:
        return "image" if self is Kind.IMAGE else "text"

    @classmethod
    def from_label(cls, label: str) -> "Kind":
        for kind in cls:
            if kind.label == label:
                return kind
        raise DataFormatError(f"unknown embedding kind {label!r}")


@dataclass
class EmbeddingSet:
    ids: list[str]
    kind: Kind
    vectors: np.ndarray  # (n, dim) float32

    def __post_init__(self) -> None:
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if self.vectors.ndim != 2:
            raise DataFormatError(f"vectors must be 2-D, got shape {self.vectors.shape}")
        if len(self.ids) != self.vectors.shape[0]:
            raise DataFormatError(
                f"{len(self.ids)} ids but {self.vectors.shape[0]} vector rows"
            )
        if len(set(self.ids)) != len(self.ids):
            dupes = sorted({i for i in self.ids if self.ids.count(i) > 1})
            raise DataFormatError(f"duplicate ids: {dupes[:5]}")

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def row(self, item_id: str) -> np.ndarray:
        return self.vectors[self.index_of(item_id)]

    def index_of(self, item_id: str) -> int:
        # Lazy reverse index; sets are effectively immutable after creation.
        if not hasattr(self, "_index"):
            self._index = {item_id: i for i, item_id in enumerate(self.ids)}
        try:
            return self._index[item_id]
        except KeyError:
            raise KeyError(item_id) from None


@dataclass
class SimilarityMatrix:
    row_ids: list[str]
    col_ids: list[str]
    values: np.ndarray  # (len(row_ids), len(col_ids)) float64

    def __post_init__(self) -> None:
        if self.values.shape != (len(self.row_ids), len(self.col_ids)):
            raise DataFormatError(
                f"similarity shape {self.values.shape} does not match "
                f"{len(self.row_ids)}x{len(self.col_ids)} ids"
            )


@dataclass
class NeighborTable:
    ids: list[str]
    k: int
    # neighbors[i] is a descending-similarity list of (id, similarity)
    neighbors: list[list[tuple[str, float]]] = field(default_factory=list)


def manifest_path(path: str | Path) -> Path:
    return Path(str(path) + ".manifest.jsonl")


def save(emb: EmbeddingSet, path: str | Path) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, emb.kind.value, emb.dim, len(emb)))
        fh.write(np.ascontiguousarray(emb.vectors, dtype="<f4").tobytes())
    with open(manifest_path(path), "w", encoding="utf-8") as fh:
        for i, item_id in enumerate(emb.ids):
            fh.write(
                json.dumps(
                    {"index": i, "id": item_id, "kind": emb.kind.label},
                    sort_keys=True,
                )
                + "\n"
            )


def load(path: str | Path) -> EmbeddingSet:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise DataFormatError(f"{path}: truncated header")
    magic, version, kind_code, dim, count = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}")
    try:
        kind = Kind(kind_code)
    except ValueError:
        raise DataFormatError(f"{path}: unknown kind code {kind_code}") from None
    expected = _HEADER.size + 4 * dim * count
    if len(raw) != expected:
        raise DataFormatError(
            f"{path}: payload is {len(raw)} bytes, header implies {expected}"
        )
    vectors = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(count, dim)

    ids: list[str] = []
    mpath = manifest_path(path)
    if not mpath.exists():
        raise DataFormatError(f"missing manifest {mpath}")
    with open(mpath, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                index, item_id, label = int(rec["index"]), str(rec["id"]), str(rec["kind"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataFormatError(f"{mpath}:{lineno + 1}: bad manifest line") from exc
            if index != len(ids):
                raise DataFormatError(
                    f"{mpath}:{lineno + 1}: index {index} out of order (expected {len(ids)})"
                )
            if Kind.from_label(label) is not kind:
                raise DataFormatError(f"{mpath}:{lineno + 1}: kind {label!r} contradicts header")
            ids.append(item_id)
    if len(ids) != count:
        raise DataFormatError(
            f"{mpath}: {len(ids)} manifest rows but payload has {count}"
        )
    return EmbeddingSet(ids=ids, kind=kind, vectors=vectors.copy())


def _norms64(vectors: np.ndarray, ids: list[str]) -> np.ndarray:
    v64 = vectors.astype(np.float64)
    norms = np.sqrt(np.einsum("ij,ij->i", v64, v64))
    if np.any(norms == 0.0):
        bad = [ids[i] for i in np.flatnonzero(norms == 0.0)[:5]]
        raise NumericalError(f"zero-norm embedding rows: {bad}")
    return norms


def normalize(emb: EmbeddingSet) -> EmbeddingSet:
    """Unit-norm rows (computed in 64-bit, stored back in 32-bit)."""
    norms = _norms64(emb.vectors, emb.ids)
    unit = (emb.vectors.astype(np.float64) / norms[:, None]).astype(np.float32)
    return EmbeddingSet(ids=list(emb.ids), kind=emb.kind, vectors=unit)


def cosine_matrix(a: EmbeddingSet, b: EmbeddingSet) -> SimilarityMatrix:
    if a.dim != b.dim:
        raise DataFormatError(f"dimension mismatch: {a.dim} vs {b.dim}")
    a64 = a.vectors.astype(np.float64) / _norms64(a.vectors, a.ids)[:, None]
    b64 = b.vectors.astype(np.float64) / _norms64(b.vectors, b.ids)[:, None]
    return SimilarityMatrix(
        row_ids=list(a.ids), col_ids=list(b.ids), values=a64 @ b64.T
    )


def top_k_neighbors(emb: EmbeddingSet, k: int) -> NeighborTable:
    """Exact top-k cosine neighbors, self excluded, ties broken by ascending id."""
    if k < 1:
        raise ConfigError(f"k must be at least 1, got {k}")
    n = len(emb)
    if n < 2:
        raise DataFormatError("need at least 2 items to compute neighbors")
    sims = cosine_matrix(emb, emb).values
    id_array = np.array(emb.ids)
    keep = min(k, n - 1)
    table = NeighborTable(ids=list(emb.ids), k=k)
    for i in range(n):
        row = sims[i].copy()
        row[i] = -np.inf  # self never competes
        # lexsort: last key is primary, so order by -sim then by id.
        order = np.lexsort((id_array, -row))[:keep]
        table.neighbors.append([(emb.ids[j], float(sims[i, j])) for j in order])
    return table


# --- neighbor table JSONL ---------------------------------------------------


def write_neighbor_table(table: NeighborTable, path: str | Path, provenance: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if provenance is not None:
            fh.write(json.dumps({"provenance": provenance}, sort_keys=True) + "\n")
        fh.write(json.dumps({"k": table.k}, sort_keys=True) + "\n")
        for item_id, nbrs in zip(table.ids, table.neighbors):
            fh.write(
                json.dumps(
                    {
                        "id": item_id,
                        "neighbors": [
                            {"id": nid, "similarity": round(sim, 12)} for nid, sim in nbrs
                        ],
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def read_neighbor_table(path: str | Path) -> NeighborTable:
    ids: list[str] = []
    neighbors: list[list[tuple[str, float]]] = []
    k: int | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}:{lineno}: invalid JSON") from exc
            if "provenance" in rec:
                continue
            if "k" in rec and "id" not in rec:
                k = int(rec["k"])
                continue
            try:
                ids.append(str(rec["id"]))
                neighbors.append(
                    [(str(n["id"]), float(n["similarity"])) for n in rec["neighbors"]]
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise DataFormatError(f"{path}:{lineno}: bad neighbor record") from exc
    if k is None:
        raise DataFormatError(f"{path}: missing k header line")
    return NeighborTable(ids=ids, k=k, neighbors=neighbors)
