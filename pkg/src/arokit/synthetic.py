"""Synthetic order-aware scenes for desk-scale training experiments.

Each scene is a two-object caption "the ADJ1 NOUN1 is VERB the ADJ2 NOUN2".
Captions are encoded as the concatenation of

* a bag component: the mean of per-word unit vectors, summed in sorted
  token order so that permutation invariance is bit-exact, and
* an order component: a position-weighted mean with a centered ramp, which
  flips sign under constituent swaps and word shuffles.

Scene images are the same two-component encoding of the true caption,
pushed through a fixed random rotation (so heads must learn a mapping) and
perturbed with Gaussian noise. Word order is thus present but not linearly
obvious in the image; plain pair-contrastive training can succeed at
retrieval while ignoring it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .contrastive import ProjectionModel, TrainingData
from .embedding_store import EmbeddingSet, Kind
from .errors import DataFormatError
from .perturbation import (
    OrderTask,
    SwapCategory,
    build_order_task,
    generate_negatives,
)
from .text_analysis import PosTag, TaggedCaption, tag_text

ADJECTIVES = [
    "red", "blue", "green", "yellow", "small", "large", "old", "young",
    "bright", "dark", "shiny", "dull", "round", "square", "tall", "short",
    "wide", "narrow",
]
NOUNS = [
    "dog", "cat", "horse", "bird", "car", "truck", "tree", "house",
    "road", "river", "table", "chair", "cup", "book", "door", "window",
    "hat", "shoe", "flower", "boat", "train", "plane", "ball", "lamp",
]
VERBS = [
    "chasing", "watching", "holding", "pushing", "pulling", "carrying",
    "touching", "facing", "following", "blocking", "passing", "circling",
]


def synthetic_lexicon() -> dict[str, PosTag]:
    lex: dict[str, PosTag] = {"the": PosTag.DET, "is": PosTag.VERB}
    lex.update({w: PosTag.ADJ for w in ADJECTIVES})
    lex.update({w: PosTag.NOUN for w in NOUNS})
    lex.update({w: PosTag.VERB for w in VERBS})
    return lex


@dataclass
class SyntheticDataset:
    ids: list[str]
    captions: list[str]
    tagged: list[TaggedCaption]
    image_vecs: np.ndarray  # (n, 2*d_sem)
    caption_vecs: np.ndarray  # (n, 2*d_sem)
    word_vecs: dict[str, np.ndarray]
    lexicon: dict[str, PosTag] = field(default_factory=synthetic_lexicon)
    d_sem: int = 24
    beta: float = 1.0
    seed: int = 0

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return 2 * self.d_sem

    def _components(self, caption: str) -> tuple[np.ndarray, np.ndarray]:
        tokens = caption.split()
        try:
            vecs = [self.word_vecs[t] for t in tokens]
        except KeyError as exc:
            raise DataFormatError(f"word not in synthetic vocabulary: {exc}") from exc
        length = len(tokens)
        # Sorted-order summation: identical multisets give identical floats.
        bag = np.zeros(self.d_sem)
        for t in sorted(tokens):
            bag = bag + self.word_vecs[t]
        bag /= length
        center = (length - 1) / 2.0
        order = np.zeros(self.d_sem)
        for i, v in enumerate(vecs):
            order = order + ((i - center) / length) * v
        order /= length
        return bag, order

    def encode_text(self, caption: str) -> np.ndarray:
        """Order-aware encoding: [bag, beta * order]."""
        bag, order = self._components(caption)
        return np.concatenate([bag, self.beta * order])

    def encode_bow(self, caption: str) -> np.ndarray:
        """Pure bag encoding; bit-exactly invariant to token order."""
        bag, _ = self._components(caption)
        return bag.copy()

    def training_data(self, indices: Sequence[int]) -> TrainingData:
        """Slice into trainer input; negatives are encoded constituent swaps."""
        neg_vecs: list[np.ndarray] = []
        for i in indices:
            negset = generate_negatives(self.tagged[i])
            ordered = [negset.negatives[c] for c in SwapCategory if c in negset.negatives]
            neg_vecs.append(np.stack([self.encode_text(t) for t in ordered]))
        return TrainingData(
            ids=[self.ids[i] for i in indices],
            image_vecs=self.image_vecs[list(indices)],
            caption_vecs=self.caption_vecs[list(indices)],
            neg_caption_vecs=neg_vecs,
        )

    def order_tasks(self, indices: Sequence[int], rng_seed: int) -> list[OrderTask]:
        return [
            build_order_task(self.tagged[i], stream_seed, image_id=self.ids[i])
            for i, stream_seed in zip(indices, range(rng_seed, rng_seed + len(indices)))
        ]


def build_synthetic_dataset(
    n_scenes: int,
    seed: int,
    d_sem: int = 24,
    beta: float = 1.0,
    kappa: float = 1.0,
    noise: float = 0.1,
) -> SyntheticDataset:
    """Sample unique scenes and fix all embeddings.

    ``beta`` scales the order component on the text side, ``kappa`` on the
    image side; ``noise`` is the expected norm of per-image Gaussian noise.
    """
    rng = np.random.default_rng(seed)
    lexicon = synthetic_lexicon()
    vocab = sorted(lexicon)
    word_vecs = {}
    for word in vocab:
        v = rng.standard_normal(d_sem)
        word_vecs[word] = v / np.linalg.norm(v)

    captions: list[str] = []
    seen: set[str] = set()
    while len(captions) < n_scenes:
        a1, a2 = rng.choice(len(ADJECTIVES), size=2, replace=False)
        n1, n2 = rng.choice(len(NOUNS), size=2, replace=False)
        v = int(rng.integers(len(VERBS)))
        caption = (
            f"the {ADJECTIVES[a1]} {NOUNS[n1]} is {VERBS[v]} "
            f"the {ADJECTIVES[a2]} {NOUNS[n2]}"
        )
        if caption not in seen:
            seen.add(caption)
            captions.append(caption)

    ds = SyntheticDataset(
        ids=[f"scene-{i:05d}" for i in range(n_scenes)],
        captions=captions,
        tagged=[tag_text(c, lexicon) for c in captions],
        image_vecs=np.zeros((n_scenes, 2 * d_sem)),
        caption_vecs=np.zeros((n_scenes, 2 * d_sem)),
        word_vecs=word_vecs,
        lexicon=lexicon,
        d_sem=d_sem,
        beta=beta,
        seed=seed,
    )

    basis, _ = np.linalg.qr(rng.standard_normal((2 * d_sem, 2 * d_sem)))
    scale = noise / math.sqrt(2 * d_sem)
    for i, caption in enumerate(captions):
        bag, order = ds._components(caption)
        ds.caption_vecs[i] = np.concatenate([bag, beta * order])
        raw = np.concatenate([bag, kappa * order])
        ds.image_vecs[i] = basis @ raw + scale * rng.standard_normal(2 * d_sem)
    return ds


def project_image_set(
    model: ProjectionModel, ids: Sequence[str], vecs: np.ndarray
) -> EmbeddingSet:
    projected = np.asarray(vecs, dtype=np.float64) @ model.w_img
    return EmbeddingSet(ids=list(ids), kind=Kind.IMAGE, vectors=projected.astype(np.float32))


def project_text_set(
    model: ProjectionModel, captions: Sequence[str], encode: Callable[[str], np.ndarray]
) -> EmbeddingSet:
    """One row per unique caption string, in first-seen order."""
    unique: list[str] = []
    seen: set[str] = set()
    for c in captions:
        if c not in seen:
            seen.add(c)
            unique.append(c)
    raw = np.stack([encode(c) for c in unique])
    projected = raw @ model.w_txt
    return EmbeddingSet(ids=unique, kind=Kind.TEXT, vectors=projected.astype(np.float32))
