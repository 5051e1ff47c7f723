import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from madcue.text import (
    OBJECT,
    PERSON,
    EmbeddingFormatError,
    EmbeddingTable,
    PhraseChunk,
    embed_text,
    extract_chunks,
    load_embeddings,
    load_vocabulary,
    save_embeddings,
    tokenize,
)


@pytest.fixture
def table():
    return EmbeddingTable(
        {"man": [1.0, 0.0, 0.0], "dog": [0.0, 2.0, 0.0], "red": [0.0, 0.0, 3.0]}, 3
    )


def test_tokenize_lowercases_and_strips_punctuation():
    assert tokenize("The Man, walking his DOG!") == ["the", "man", "walking", "his", "dog"]
    assert tokenize("  ... ") == []
    assert tokenize("isn't") == ["isn't"]


def test_embed_text_is_mean_of_known_tokens(table):
    vec, known = embed_text(table, ["man", "dog", "zebra", "red"])
    np.testing.assert_allclose(vec, [1 / 3, 2 / 3, 1.0])
    assert known == 0.75


def test_embed_text_all_unknown_gives_zero_vector(table):
    vec, known = embed_text(table, ["zebra", "unicorn"])
    assert known == 0.0
    assert vec.shape == (3,) and not vec.any()


def test_embed_text_rejects_empty(table):
    with pytest.raises(ValueError):
        embed_text(table, [])


def test_table_validation():
    with pytest.raises(EmbeddingFormatError, match="no entries"):
        EmbeddingTable({}, 3)
    with pytest.raises(EmbeddingFormatError, match="expected 3"):
        EmbeddingTable({"a": [1.0, 2.0]}, 3)
    with pytest.raises(EmbeddingFormatError, match="invalid token"):
        EmbeddingTable({"Upper": [1.0]}, 1)


def test_table_vectors_are_read_only(table):
    with pytest.raises(ValueError):
        table.lookup("man")[0] = 5.0
    assert "man" in table and "zebra" not in table
    assert table.max_norm() == 3.0


def test_load_embeddings_with_header_and_duplicates(tmp_path):
    p = tmp_path / "emb.txt"
    p.write_text("3 2\nCat 1 2\ndog 3 4\ncat 9 9\n\n", encoding="utf-8")
    t = load_embeddings(p)
    assert len(t) == 2 and t.dimension == 2 and t.duplicates == 1
    np.testing.assert_array_equal(t.lookup("cat"), [1.0, 2.0])


@pytest.mark.parametrize(
    "content, message",
    [
        ("a 1 2\nb 1\n", ":2: 1 values, expected 2"),
        ("a 1 x\n", ":1:"),
        ("a nan 1\n", "non-finite"),
        ("\n\n", "no entries"),
        ("lonely\n", "expected a token"),
    ],
)
def test_load_embeddings_errors_carry_line_numbers(tmp_path, content, message):
    p = tmp_path / "bad.txt"
    p.write_text(content, encoding="utf-8")
    with pytest.raises(EmbeddingFormatError, match=message):
        load_embeddings(p)


def test_save_load_embeddings_round_trip_exact(tmp_path):
    rng = np.random.default_rng(0)
    t = EmbeddingTable({f"w{i}": rng.standard_normal(5) for i in range(10)}, 5)
    save_embeddings(t, tmp_path / "e.txt")
    back = load_embeddings(tmp_path / "e.txt")
    for tok in t:
        assert back.lookup(tok).tobytes() == t.lookup(tok).tobytes()


PERSONS = ["man", "woman", "young man", "old lady"]
OBJECTS = ["dog", "hot dog", "teddy bear", "man"]


def test_extract_chunks_longest_match_first():
    chunks = extract_chunks(tokenize("A young man eats a hot dog"), PERSONS, OBJECTS)
    assert [(c.kind, c.text, c.span) for c in chunks] == [
        (PERSON, "young man", (1, 3)),
        (OBJECT, "hot dog", (5, 7)),
    ]


def test_extract_chunks_person_wins_equal_length_tie():
    (chunk,) = extract_chunks(["man"], PERSONS, OBJECTS)
    assert chunk.kind == PERSON


def test_extract_chunks_none_found():
    assert extract_chunks(tokenize("it is sunny"), PERSONS, OBJECTS) == []


def test_extract_chunks_needs_vocabularies():
    with pytest.raises(ValueError):
        extract_chunks(["man"], [], OBJECTS)


def test_phrase_chunk_validation():
    with pytest.raises(ValueError):
        PhraseChunk("animal", ("dog",), (0, 1), "dog")
    with pytest.raises(ValueError):
        PhraseChunk(OBJECT, ("dog",), (0, 2), "dog")


def test_load_vocabulary(tmp_path):
    p = tmp_path / "v.txt"
    p.write_text("# persons\nman\n\n young man \n", encoding="utf-8")
    assert load_vocabulary(p) == ["man", "young man"]
    (tmp_path / "e.txt").write_text("# nothing\n", encoding="utf-8")
    with pytest.raises(ValueError, match="empty"):
        load_vocabulary(tmp_path / "e.txt")


words = st.sampled_from(["man", "woman", "young", "old", "lady", "dog", "hot", "teddy", "bear", "the", "a"])


@settings(max_examples=200, deadline=None)
@given(st.lists(words, max_size=12))
def test_property_chunks_are_ordered_disjoint_vocabulary_matches(tokens):
    chunks = extract_chunks(tokens, PERSONS, OBJECTS)
    end = 0
    for c in chunks:
        assert c.span[0] >= end
        end = c.span[1]
        assert tuple(tokens[c.span[0]:c.span[1]]) == c.tokens
        vocab = PERSONS if c.kind == PERSON else OBJECTS
        assert c.text in vocab


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from(["man", "dog", "red", "zebra"]), min_size=1, max_size=8))
def test_property_embedding_known_fraction(tokens):
    t = EmbeddingTable({"man": [1.0, 0.0], "dog": [0.0, 1.0], "red": [1.0, 1.0]}, 2)
    vec, known = embed_text(t, tokens)
    n_known = sum(tok != "zebra" for tok in tokens)
    assert known == n_known / len(tokens)
    if n_known:
        manual = sum(np.asarray(t.lookup(x)) for x in tokens if x != "zebra") / n_known
        np.testing.assert_allclose(vec, manual, atol=1e-12)
