import pytest

from arokit.text_analysis import default_lexicon_path, load_lexicon, tag_text


@pytest.fixture(scope="session")
def lexicon():
    return load_lexicon(default_lexicon_path())


@pytest.fixture(scope="session")
def ten_word_caption(lexicon):
    """Tagged 'remarkable scene ...' sentence; tags ADJ NOUN ADP DET ADJ NOUN ADP DET ADJ NOUN."""
    return tag_text("remarkable scene with a blue ball behind a green chair", lexicon)


@pytest.fixture(scope="session")
def two_clause_caption(lexicon):
    """Tagged two-clause sentence with two swappable nouns and verb phrases."""
    return tag_text(
        "The man is eating the sandwich and the woman is watching the television",
        lexicon,
    )
