"""Tokenization, lexicon-based POS tagging, and shallow phrase chunking.

The tagger is deliberately lexicon-only: desk-scale corpora ship with curated
lexicons, and large corpora arrive pre-tagged (``parse_pretagged``) from any
external tagger. Chunk grammars are shallow because downstream swaps only
need span identity:

* noun phrase:  DET? ADJ* NOUN+
* verb phrase:  VERB+ ADP?
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import DataFormatError

TERMINAL_PUNCT = ".,!?;:"

Span = tuple[int, int]  # half-open [start, stop) over token indices


class PosTag(str, Enum):
    NOUN = "NOUN"
    ADJ = "ADJ"
    ADV = "ADV"
    VERB = "VERB"
    DET = "DET"
    ADP = "ADP"
    PRON = "PRON"
    CONJ = "CONJ"
    NUM = "NUM"
    OTHER = "OTHER"


@dataclass(frozen=True)
class Token:
    text: str
    tag: PosTag
    index: int


@dataclass
class TaggedCaption:
    """Tokens plus noun/verb phrase spans; the substrate of all perturbations."""

    tokens: list[Token]
    noun_phrases: list[Span] = field(default_factory=list)
    verb_phrases: list[Span] = field(default_factory=list)

    @classmethod
    def from_tagged_tokens(cls, pairs: Sequence[tuple[str, PosTag]]) -> "TaggedCaption":
        tokens = [Token(text, tag, i) for i, (text, tag) in enumerate(pairs)]
        tags = [t.tag for t in tokens]
        return cls(
            tokens=tokens,
            noun_phrases=chunk_noun_phrases(tags),
            verb_phrases=chunk_verb_phrases(tags),
        )

    @property
    def words(self) -> list[str]:
        return [t.text for t in self.tokens]

    @property
    def tags(self) -> list[PosTag]:
        return [t.tag for t in self.tokens]

    @property
    def text(self) -> str:
        return detokenize(self.words)


def tokenize(text: str) -> list[str]:
    """Whitespace split; terminal punctuation is detached as its own tokens.

    Hyphenated words stay single tokens. Casing is preserved.
    """
    out: list[str] = []
    for raw in text.split():
        tail: list[str] = []
        while len(raw) > 1 and raw[-1] in TERMINAL_PUNCT:
            tail.append(raw[-1])
            raw = raw[:-1]
        out.append(raw)
        out.extend(reversed(tail))
    return out


def detokenize(words: Iterable[str]) -> str:
    return " ".join(words)


def tag_with_lexicon(tokens: Sequence[str], lexicon: Mapping[str, PosTag]) -> TaggedCaption:
    """Tag by case-insensitive lexicon lookup; unknown words become OTHER."""
    lowered = {word.lower(): tag for word, tag in lexicon.items()}
    pairs = [(tok, lowered.get(tok.lower(), PosTag.OTHER)) for tok in tokens]
    return TaggedCaption.from_tagged_tokens(pairs)


def tag_text(text: str, lexicon: Mapping[str, PosTag]) -> TaggedCaption:
    return tag_with_lexicon(tokenize(text), lexicon)


def load_lexicon(path: str | Path) -> dict[str, PosTag]:
    """Load a JSON word -> tag map, validating tag names."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise DataFormatError(f"{path}: lexicon must be a JSON object")
    lexicon: dict[str, PosTag] = {}
    for word, tag in raw.items():
        try:
            lexicon[word] = PosTag(tag)
        except ValueError:
            raise DataFormatError(f"{path}: unknown tag {tag!r} for word {word!r}") from None
    return lexicon


def default_lexicon_path() -> Path:
    """Path of the small English lexicon shipped with the package."""
    return Path(__file__).parent / "data" / "lexicon_small.json"


def parse_pretagged(stream: Iterable[str] | str) -> list[TaggedCaption]:
    """Parse token<TAB>tag lines; a blank line ends a caption.

    Raises DataFormatError with the 1-based line number for malformed lines
    or tags outside the tagset.
    """
    if isinstance(stream, str):
        lines: Iterable[str] = stream.splitlines()
    else:
        lines = stream
    captions: list[TaggedCaption] = []
    pending: list[tuple[str, PosTag]] = []
    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\n")
        if not line.strip():
            if pending:
                captions.append(TaggedCaption.from_tagged_tokens(pending))
                pending = []
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0]:
            raise DataFormatError(f"line {lineno}: expected 'token<TAB>tag', got {line!r}")
        text, tagname = parts
        try:
            tag = PosTag(tagname)
        except ValueError:
            raise DataFormatError(f"line {lineno}: unknown tag {tagname!r}") from None
        pending.append((text, tag))
    if pending:
        captions.append(TaggedCaption.from_tagged_tokens(pending))
    return captions


def chunk_noun_phrases(tags: Sequence[PosTag]) -> list[Span]:
    """Maximal DET? ADJ* NOUN+ spans, left to right."""
    spans: list[Span] = []
    i, n = 0, len(tags)
    while i < n:
        j = i
        if j < n and tags[j] is PosTag.DET:
            j += 1
        while j < n and tags[j] is PosTag.ADJ:
            j += 1
        k = j
        while k < n and tags[k] is PosTag.NOUN:
            k += 1
        if k > j:  # at least one noun
            spans.append((i, k))
            i = k
        else:
            i += 1
    return spans


def chunk_verb_phrases(tags: Sequence[PosTag]) -> list[Span]:
    """Maximal VERB+ spans, absorbing one trailing ADP (e.g. "sitting on")."""
    spans: list[Span] = []
    i, n = 0, len(tags)
    while i < n:
        if tags[i] is not PosTag.VERB:
            i += 1
            continue
        j = i
        while j < n and tags[j] is PosTag.VERB:
            j += 1
        if j < n and tags[j] is PosTag.ADP:
            j += 1
        spans.append((i, j))
        i = j
    return spans
