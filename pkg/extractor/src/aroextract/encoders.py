"""Encoders behind the ``--model`` flag.

Two schemes:

* ``hash:<dim>``: a dependency-free deterministic encoder for pipeline
  tests. Every vector is a pure function of the input bytes; no semantics,
  perfectly reproducible.
* ``clip:<hf-model-id>``: a real dual encoder via transformers, e.g.
  ``clip:openai/clip-vit-base-patch32``. Imported lazily so the package
  works without torch installed.
"""

from __future__ import annotations

import hashlib
from typing import Protocol, Sequence

import numpy as np
from PIL import Image

from .errors import UsageError

_GOLDEN = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1


class Encoder(Protocol):
    dim: int

    def encode_texts(self, texts: Sequence[str]) -> np.ndarray: ...

    def encode_images(self, images: Sequence[Image.Image]) -> np.ndarray: ...


def _mix64(x: int) -> int:
    x &= _MASK
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _MASK
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _MASK
    x ^= x >> 31
    return x


def _expand(seed: int, dim: int) -> np.ndarray:
    """dim floats in [-1, 1), a fixed function of the seed."""
    out = np.empty(dim, dtype=np.float64)
    for j in range(dim):
        v = _mix64((seed + (j + 1) * _GOLDEN) & _MASK)
        out[j] = (v >> 11) / float(1 << 53) * 2.0 - 1.0
    return out


def _digest_seed(payload: bytes) -> int:
    return int.from_bytes(hashlib.sha256(payload).digest()[:8], "little")


class HashEncoder:
    """Content-hash embeddings; deterministic and model-free."""

    def __init__(self, dim: int):
        if dim < 1:
            raise UsageError(f"hash encoder dim must be >= 1, got {dim}")
        self.dim = dim

    def encode_texts(self, texts: Sequence[str]) -> np.ndarray:
        rows = np.empty((len(texts), self.dim), dtype=np.float64)
        for i, text in enumerate(texts):
            # Mean of per-token vectors: shares mass across captions with
            # common words, which keeps cosine structure non-trivial.
            tokens = text.split()
            acc = np.zeros(self.dim)
            for tok in tokens:
                acc += _expand(_digest_seed(b"tok\x00" + tok.encode("utf-8")), self.dim)
            rows[i] = acc / len(tokens)
        return rows.astype(np.float32)

    def encode_images(self, images: Sequence[Image.Image]) -> np.ndarray:
        rows = np.empty((len(images), self.dim), dtype=np.float64)
        for i, img in enumerate(images):
            rgb = img.convert("RGB")
            head = f"img\x00{rgb.width}x{rgb.height}\x00".encode("ascii")
            rows[i] = _expand(_digest_seed(head + rgb.tobytes()), self.dim)
        return rows.astype(np.float32)


class ClipEncoder:
    """Frozen CLIP-style dual encoder from the transformers hub."""

    def __init__(self, model_id: str):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise UsageError(
                f"model 'clip:{model_id}' needs torch and transformers installed"
            ) from exc
        try:
            self._model = CLIPModel.from_pretrained(model_id)
            self._processor = CLIPProcessor.from_pretrained(model_id)
        except Exception as exc:  # hub errors come in many flavors
            raise UsageError(f"cannot load CLIP model {model_id!r}: {exc}") from exc
        self._torch = torch
        self._model.eval()
        self.dim = int(self._model.config.projection_dim)

    def encode_texts(self, texts: Sequence[str]) -> np.ndarray:
        inputs = self._processor(
            text=list(texts), return_tensors="pt", padding=True, truncation=True
        )
        with self._torch.no_grad():
            feats = self._model.get_text_features(**inputs)
        return feats.cpu().numpy().astype(np.float32)

    def encode_images(self, images: Sequence[Image.Image]) -> np.ndarray:
        inputs = self._processor(
            images=[img.convert("RGB") for img in images], return_tensors="pt"
        )
        with self._torch.no_grad():
            feats = self._model.get_image_features(**inputs)
        return feats.cpu().numpy().astype(np.float32)


def build_encoder(model_id: str) -> Encoder:
    scheme, sep, rest = model_id.partition(":")
    if not sep or not rest:
        raise UsageError(
            f"model id {model_id!r} must look like 'hash:<dim>' or 'clip:<hf-id>'"
        )
    if scheme == "hash":
        try:
            dim = int(rest)
        except ValueError:
            raise UsageError(f"bad hash encoder dim {rest!r}") from None
        return HashEncoder(dim)
    if scheme == "clip":
        return ClipEncoder(rest)
    raise UsageError(f"unknown model scheme {scheme!r} (use 'hash:' or 'clip:')")
