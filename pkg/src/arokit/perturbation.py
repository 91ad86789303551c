"""Order perturbations of captions and constituent-swap negative captions.

Five shuffle strategies destroy word order in controlled ways; negative
captions swap exactly one pair of same-kind constituents (nouns, adjectives,
adverbs, verb phrases, or noun phrases of three or more tokens) so the
negative shares the token multiset of the original but not its composition.

All randomness flows through the pinned generator in :mod:`arokit.rng`; a
caption's stream is derived from (global seed, caption id), so per-caption
parallelism cannot change results.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterator, Sequence

from .errors import DataFormatError
from .rng import SplitMix64, stream_at
from .text_analysis import PosTag, Span, TaggedCaption, detokenize

TRIGRAM = 3
#: Bounded retries before an alternative that keeps collapsing onto the
#: original caption is declared degenerate.
MAX_RESAMPLE_ATTEMPTS = 16


class PerturbationStrategy(str, Enum):
    SHUFFLE_NOUNS_ADJ = "shuffle_nouns_adj"
    SHUFFLE_ALL_BUT_NOUNS_ADJ = "shuffle_all_but_nouns_adj"
    SHUFFLE_TRIGRAMS = "shuffle_trigrams"
    SHUFFLE_WITHIN_TRIGRAMS = "shuffle_within_trigrams"
    SHUFFLE_ALL_WORDS = "shuffle_all_words"


#: The four strategies used to build an order task, in fixed order.
ORDER_TASK_STRATEGIES = (
    PerturbationStrategy.SHUFFLE_NOUNS_ADJ,
    PerturbationStrategy.SHUFFLE_ALL_BUT_NOUNS_ADJ,
    PerturbationStrategy.SHUFFLE_TRIGRAMS,
    PerturbationStrategy.SHUFFLE_WITHIN_TRIGRAMS,
)


class SwapCategory(str, Enum):
    NOUN = "noun"
    ADJECTIVE = "adjective"
    ADVERB = "adverb"
    VERB_PHRASE = "verb_phrase"
    NOUN_PHRASE = "noun_phrase"


_TOKEN_CATEGORY_TAGS = {
    SwapCategory.NOUN: PosTag.NOUN,
    SwapCategory.ADJECTIVE: PosTag.ADJ,
    SwapCategory.ADVERB: PosTag.ADV,
}

_NOUN_ADJ = (PosTag.NOUN, PosTag.ADJ)


@dataclass
class NegativeCaptionSet:
    """One caption's swap negatives, at most one per category."""

    original: str
    negatives: dict[SwapCategory, str] = field(default_factory=dict)

    @property
    def removable(self) -> bool:
        """True when no swap exists; such captions are dropped upstream."""
        return not self.negatives


@dataclass
class OrderTask:
    """Original caption plus one alternative per order-task strategy.

    An alternative equal to ``true_caption`` marks a degenerate strategy (the
    caption admits no differing permutation of that kind); evaluators drop it
    and adjust the chance level.
    """

    true_caption: str
    alternatives: list[str]
    seed: int
    image_id: str = ""


def movable_positions(tagged: TaggedCaption, strategy: PerturbationStrategy) -> list[int]:
    """Token indices a strategy is allowed to move (trigram strategies move all)."""
    if strategy is PerturbationStrategy.SHUFFLE_NOUNS_ADJ:
        return [t.index for t in tagged.tokens if t.tag in _NOUN_ADJ]
    if strategy is PerturbationStrategy.SHUFFLE_ALL_BUT_NOUNS_ADJ:
        return [t.index for t in tagged.tokens if t.tag not in _NOUN_ADJ]
    return list(range(len(tagged.tokens)))


def _trigram_groups(words: list[str]) -> list[list[str]]:
    # Left-to-right partition; the final group may be shorter than 3.
    return [words[i : i + TRIGRAM] for i in range(0, len(words), TRIGRAM)]


def perturb(tagged: TaggedCaption, strategy: PerturbationStrategy, rng_seed: int) -> str:
    """Apply one shuffle strategy; deterministic in (caption, strategy, seed).

    A caption with fewer than two movable tokens (or fewer than two trigram
    groups, for the group shuffle) is returned unchanged.
    """
    words = list(tagged.words)
    rng = SplitMix64(rng_seed)

    if strategy is PerturbationStrategy.SHUFFLE_TRIGRAMS:
        groups = _trigram_groups(words)
        if len(groups) < 2:
            return detokenize(words)
        rng.shuffle(groups)
        return detokenize([w for g in groups for w in g])

    if strategy is PerturbationStrategy.SHUFFLE_WITHIN_TRIGRAMS:
        groups = _trigram_groups(words)
        if not any(len(g) >= 2 for g in groups):
            return detokenize(words)
        for group in groups:
            rng.shuffle(group)
        return detokenize([w for g in groups for w in g])

    positions = movable_positions(tagged, strategy)
    if len(positions) < 2:
        return detokenize(words)
    moved = [words[p] for p in positions]
    rng.shuffle(moved)
    for pos, word in zip(positions, moved):
        words[pos] = word
    return detokenize(words)


def build_order_task(
    tagged: TaggedCaption, rng_seed: int, image_id: str = ""
) -> OrderTask:
    """One alternative per order-task strategy, resampled away from identity.

    Strategy k, attempt t draws its shuffle seed from ``stream_at(rng_seed,
    16*k + t)``. After 16 identity outputs the alternative stays equal to the
    original, flagging the strategy as degenerate for this caption.
    """
    original = tagged.text
    alternatives: list[str] = []
    for k, strategy in enumerate(ORDER_TASK_STRATEGIES):
        candidate = original
        for attempt in range(MAX_RESAMPLE_ATTEMPTS):
            seed = stream_at(rng_seed, MAX_RESAMPLE_ATTEMPTS * k + attempt)
            candidate = perturb(tagged, strategy, seed)
            if candidate != original:
                break
        alternatives.append(candidate)
    return OrderTask(
        true_caption=original,
        alternatives=alternatives,
        seed=rng_seed,
        image_id=image_id,
    )


# --- negative captions ----------------------------------------------------


def _category_elements(tagged: TaggedCaption, category: SwapCategory) -> list[Span]:
    """Elements of a category as token spans (single tokens for word kinds)."""
    if category in _TOKEN_CATEGORY_TAGS:
        tag = _TOKEN_CATEGORY_TAGS[category]
        return [(t.index, t.index + 1) for t in tagged.tokens if t.tag is tag]
    if category is SwapCategory.VERB_PHRASE:
        return list(tagged.verb_phrases)
    # Noun phrases of fewer than three tokens are left to plain noun swapping.
    return [span for span in tagged.noun_phrases if span[1] - span[0] >= TRIGRAM]


def _span_words(words: Sequence[str], span: Span) -> tuple[str, ...]:
    return tuple(words[span[0] : span[1]])


def _following_tag(tagged: TaggedCaption, span: Span) -> PosTag | None:
    """Tag of the token right after a span; None at the end of the caption."""
    stop = span[1]
    return tagged.tokens[stop].tag if stop < len(tagged.tokens) else None


def _pick_swap_pair(tagged: TaggedCaption, elements: list[Span]) -> tuple[Span, Span] | None:
    """Deterministic choice of which two elements to swap.

    Prefers the first pair (in left-to-right order) whose elements differ in
    text and sit in the same right context (same following tag), so the swap
    stays grammatical; falls back to the first differing pair.
    """
    words = tagged.words
    fallback: tuple[Span, Span] | None = None
    for i in range(len(elements)):
        for j in range(i + 1, len(elements)):
            a, b = elements[i], elements[j]
            if _span_words(words, a) == _span_words(words, b):
                continue
            if fallback is None:
                fallback = (a, b)
            if _following_tag(tagged, a) == _following_tag(tagged, b):
                return a, b
    return fallback


def _swap_spans(words: Sequence[str], a: Span, b: Span) -> list[str]:
    """Exchange two non-overlapping spans; differing lengths re-flow the rest."""
    first, second = (a, b) if a[0] < b[0] else (b, a)
    words = list(words)
    return (
        words[: first[0]]
        + words[second[0] : second[1]]
        + words[first[1] : second[0]]
        + words[first[0] : first[1]]
        + words[second[1] :]
    )


def generate_negatives(tagged: TaggedCaption) -> NegativeCaptionSet:
    """One swap negative per category that has two text-distinct elements."""
    original = tagged.text
    negatives: dict[SwapCategory, str] = {}
    for category in SwapCategory:
        elements = _category_elements(tagged, category)
        if len(elements) < 2:
            continue
        pair = _pick_swap_pair(tagged, elements)
        if pair is None:
            continue
        swapped = detokenize(_swap_spans(tagged.words, *pair))
        if swapped != original:
            negatives[category] = swapped
    return NegativeCaptionSet(original=original, negatives=negatives)


def sample_negative(negset: NegativeCaptionSet, rng_seed: int) -> str:
    """Uniform draw over present categories, in canonical category order."""
    if negset.removable:
        raise ValueError("caption has no negatives; it should have been removed")
    present = [c for c in SwapCategory if c in negset.negatives]
    choice = SplitMix64(rng_seed).below(len(present))
    return negset.negatives[present[choice]]


# --- JSON Lines I/O -----------------------------------------------------


def order_task_to_dict(task: OrderTask) -> dict:
    return {
        "image_id": task.image_id,
        "true_caption": task.true_caption,
        "alternatives": list(task.alternatives),
        "seed": task.seed,
    }


def order_task_from_dict(record: dict) -> OrderTask:
    try:
        return OrderTask(
            true_caption=str(record["true_caption"]),
            alternatives=[str(a) for a in record["alternatives"]],
            seed=int(record["seed"]),
            image_id=str(record.get("image_id", "")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"bad order-task record: {exc}") from exc


def negative_set_to_dict(negset: NegativeCaptionSet) -> dict:
    return {
        "original": negset.original,
        "negatives": {c.value: text for c, text in sorted(negset.negatives.items())},
        "removable": negset.removable,
    }


def negative_set_from_dict(record: dict) -> NegativeCaptionSet:
    try:
        return NegativeCaptionSet(
            original=str(record["original"]),
            negatives={
                SwapCategory(c): str(text)
                for c, text in record.get("negatives", {}).items()
            },
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"bad negative-set record: {exc}") from exc


def _read_jsonl(path: str | Path) -> Iterator[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}:{lineno}: invalid JSON") from exc
            if "provenance" in record:
                continue
            yield record


def read_order_tasks(path: str | Path) -> list[OrderTask]:
    return [order_task_from_dict(r) for r in _read_jsonl(path)]


def read_negative_sets(path: str | Path) -> list[NegativeCaptionSet]:
    return [negative_set_from_dict(r) for r in _read_jsonl(path)]


def write_jsonl(path: str | Path, records: Sequence[dict], provenance: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if provenance is not None:
            fh.write(json.dumps({"provenance": provenance}, sort_keys=True) + "\n")
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
