import pytest

from arokit.errors import DataFormatError
from arokit.text_analysis import (
    PosTag,
    TaggedCaption,
    chunk_noun_phrases,
    chunk_verb_phrases,
    default_lexicon_path,
    detokenize,
    load_lexicon,
    parse_pretagged,
    tag_text,
    tag_with_lexicon,
    tokenize,
)


class TestTokenize:
    def test_terminal_punctuation_detached(self):
        assert tokenize("A dog runs.") == ["A", "dog", "runs", "."]

    def test_empty_string(self):
        assert tokenize("") == []

    def test_hyphenated_words_stay_whole(self):
        assert tokenize("blue-green ball") == ["blue-green", "ball"]

    def test_stacked_punctuation_splits_in_order(self):
        assert tokenize("really?!") == ["really", "?", "!"]

    def test_casing_preserved(self):
        assert tokenize("The Dog") == ["The", "Dog"]

    def test_lone_punctuation_token_survives(self):
        # A bare "." has length 1, so there is nothing left to detach from.
        assert tokenize(". .") == [".", "."]

    def test_detokenize_round_trip_normalizes_spaces(self):
        assert detokenize(tokenize("a  dog   runs")) == "a dog runs"


class TestTagging:
    def test_lexicon_lookup(self):
        lex = {"the": PosTag.DET, "blue": PosTag.ADJ, "ball": PosTag.NOUN}
        tagged = tag_with_lexicon(["the", "blue", "ball"], lex)
        assert tagged.tags == [PosTag.DET, PosTag.ADJ, PosTag.NOUN]

    def test_unknown_word_becomes_other(self):
        tagged = tag_with_lexicon(["zorp"], {})
        assert tagged.tags == [PosTag.OTHER]

    def test_lookup_is_case_insensitive(self):
        tagged = tag_with_lexicon(["The", "BALL"], {"the": PosTag.DET, "ball": PosTag.NOUN})
        assert tagged.tags == [PosTag.DET, PosTag.NOUN]

    def test_ten_word_fixture_tags(self, lexicon):
        tagged = tag_text("remarkable scene with a blue ball behind a green chair", lexicon)
        assert [t.value for t in tagged.tags] == [
            "ADJ", "NOUN", "ADP", "DET", "ADJ",
            "NOUN", "ADP", "DET", "ADJ", "NOUN",
        ]

    def test_token_indices_are_contiguous(self, ten_word_caption):
        assert [t.index for t in ten_word_caption.tokens] == list(range(10))

    def test_determinism(self, lexicon):
        a = tag_text("the horse is eating the grass", lexicon)
        b = tag_text("the horse is eating the grass", lexicon)
        assert a.tokens == b.tokens
        assert a.noun_phrases == b.noun_phrases
        assert a.verb_phrases == b.verb_phrases

    def test_text_property_round_trips(self, ten_word_caption):
        assert ten_word_caption.text == "remarkable scene with a blue ball behind a green chair"


class TestLexiconFile:
    def test_shipped_lexicon_loads(self):
        lex = load_lexicon(default_lexicon_path())
        assert lex["the"] is PosTag.DET
        assert lex["remarkable"] is PosTag.ADJ
        assert lex["is"] is PosTag.VERB

    def test_unknown_tag_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"dog": "NOUNX"}')
        with pytest.raises(DataFormatError):
            load_lexicon(path)

    def test_non_object_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('["dog"]')
        with pytest.raises(DataFormatError):
            load_lexicon(path)


class TestParsePretagged:
    def test_single_token(self):
        captions = parse_pretagged("dog\tNOUN\n")
        assert len(captions) == 1
        assert captions[0].tokens[0].text == "dog"
        assert captions[0].tokens[0].tag is PosTag.NOUN

    def test_unknown_tag_errors_with_line_number(self):
        with pytest.raises(DataFormatError, match="line 1"):
            parse_pretagged("dog\tNOUNX\n")

    def test_malformed_line_errors(self):
        with pytest.raises(DataFormatError, match="line 2"):
            parse_pretagged("dog\tNOUN\nno-tab-here\n")

    def test_blank_line_separates_captions(self):
        text = "a\tDET\ndog\tNOUN\n\nthe\tDET\ncat\tNOUN\n"
        captions = parse_pretagged(text)
        assert [c.words for c in captions] == [["a", "dog"], ["the", "cat"]]

    def test_trailing_caption_without_blank_line(self):
        assert len(parse_pretagged("dog\tNOUN")) == 1


class TestChunking:
    def test_det_adj_noun_is_one_span(self):
        tags = [PosTag.DET, PosTag.ADJ, PosTag.NOUN]
        assert chunk_noun_phrases(tags) == [(0, 3)]

    def test_bare_noun_is_a_span(self):
        assert chunk_noun_phrases([PosTag.NOUN]) == [(0, 1)]

    def test_two_noun_phrases_split_by_adposition(self):
        tags = [PosTag.DET, PosTag.NOUN, PosTag.ADP, PosTag.DET, PosTag.NOUN]
        assert chunk_noun_phrases(tags) == [(0, 2), (3, 5)]

    def test_det_without_noun_is_not_a_phrase(self):
        assert chunk_noun_phrases([PosTag.DET, PosTag.ADJ, PosTag.VERB]) == []

    def test_verb_verb_is_one_span(self):
        assert chunk_verb_phrases([PosTag.VERB, PosTag.VERB]) == [(0, 2)]

    def test_verb_absorbs_one_trailing_adposition(self):
        assert chunk_verb_phrases([PosTag.VERB, PosTag.ADP]) == [(0, 2)]

    def test_no_verbs_no_spans(self):
        assert chunk_verb_phrases([PosTag.DET, PosTag.NOUN]) == []

    def test_spans_do_not_overlap(self, two_clause_caption):
        for spans in (two_clause_caption.noun_phrases, two_clause_caption.verb_phrases):
            for (a0, a1), (b0, b1) in zip(spans, spans[1:]):
                assert a1 <= b0
            for s0, s1 in spans:
                assert 0 <= s0 < s1 <= len(two_clause_caption.tokens)

    def test_two_clause_fixture_verb_phrases(self, two_clause_caption):
        # "is eating" and "is watching", as spans.
        words = two_clause_caption.words
        vp = [" ".join(words[a:b]) for a, b in two_clause_caption.verb_phrases]
        assert vp == ["is eating", "is watching"]


class TestTaggedCaptionConstruction:
    def test_from_tagged_tokens_runs_chunkers(self):
        tagged = TaggedCaption.from_tagged_tokens(
            [("the", PosTag.DET), ("dog", PosTag.NOUN), ("is", PosTag.VERB)]
        )
        assert tagged.noun_phrases == [(0, 2)]
        assert tagged.verb_phrases == [(2, 3)]
