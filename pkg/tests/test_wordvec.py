import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from zslvideo.wordvec import (ClassName, DegenerateEmbeddingError, OutOfVocabularyError, VectorParseError,
                              WordVectorTable, ZeroNormError, cosine_distance, embed_class, load_substitutions,
                              load_word_vectors, normalize_tokens, pairwise_cosine_distance, write_word_vectors)


@pytest.fixture
def vec_file(tmp_path):
    p = tmp_path / "vecs.txt"
    p.write_text("2 3\ncat 1 0 0\ndog 0 1 0\n", encoding="utf-8")
    return p


def test_load_basic(vec_file):
    table = load_word_vectors(vec_file)
    assert table.dim == 3
    assert len(table) == 2
    np.testing.assert_array_equal(table["dog"], [0, 1, 0])


def test_load_restricted(vec_file):
    table = load_word_vectors(vec_file, restrict_vocab={"cat"})
    assert list(table.entries) == ["cat"]


@pytest.mark.parametrize("body, lineno", [
    ("2 3\ncat 1 0\ndog 0 1 0\n", 2),
    ("2 3\ncat 1 0 0\ndog 0 x 0\n", 3),
    ("2 3\ncat 1 0 0\ncat 0 1 0\n", 3),
])
def test_load_errors_carry_line_numbers(tmp_path, body, lineno):
    p = tmp_path / "bad.txt"
    p.write_text(body, encoding="utf-8")
    with pytest.raises(VectorParseError) as info:
        load_word_vectors(p)
    assert info.value.lineno == lineno


def test_case_folded_duplicates_keep_first(tmp_path):
    p = tmp_path / "v.txt"
    p.write_text("2 2\nApple 1 0\napple 0 1\n", encoding="utf-8")
    np.testing.assert_array_equal(load_word_vectors(p)["apple"], [1, 0])


def test_write_read_roundtrip(tmp_path, rng):
    table = WordVectorTable(4, {f"w{i}": rng.standard_normal(4) for i in range(5)})
    write_word_vectors(tmp_path / "t.txt", table)
    back = load_word_vectors(tmp_path / "t.txt")
    for k, v in table.entries.items():
        np.testing.assert_array_equal(back[k], v)


def test_normalize_tokens():
    assert normalize_tokens("Playing_Guitar") == ("playing", "guitar")
    assert normalize_tokens("hula-hooping (kids)") == ("hula", "hooping", "kids")
    assert normalize_tokens("  Tai Chi ") == ("tai", "chi")
    with pytest.raises(ValueError):
        ClassName("--")


def test_embed_single_word():
    table = WordVectorTable(3, {"archery": np.array([0.2, -1.0, 3.0])})
    np.testing.assert_array_equal(embed_class("archery", table), [0.2, -1.0, 3.0])


def test_embed_mean_of_two():
    table = WordVectorTable(3, {"a": np.array([1.0, 0, 0]), "b": np.array([0, 1.0, 0])})
    np.testing.assert_array_equal(embed_class("a b", table), [0.5, 0.5, 0])


def test_embed_with_substitution(tmp_path):
    table = WordVectorTable(2, {"rubik": np.array([1.0, 2.0]), "cube": np.array([3.0, 0.0])})
    subs_file = tmp_path / "subs.txt"
    subs_file.write_text("# manual fixes\nrubiks -> rubik\nphotobombing -> photo bombing\n", encoding="utf-8")
    subs = load_substitutions(subs_file)
    assert subs["photobombing"] == ("photo", "bombing")
    np.testing.assert_array_equal(embed_class("rubiks cube", table, subs), [2.0, 1.0])
    with pytest.raises(OutOfVocabularyError) as info:
        embed_class("rubiks cube", table)
    assert info.value.tokens == ["rubiks"]


def test_embed_degenerate():
    table = WordVectorTable(2, {"up": np.array([1.0, 0]), "down": np.array([-1.0, 0])})
    with pytest.raises(DegenerateEmbeddingError):
        embed_class("up down", table)


@pytest.mark.parametrize("a, b, expected", [
    ((3, 4), (3, 4), 0.0),
    ((1, 0), (0, 1), 1.0),
    ((1, 0), (-1, 0), 2.0),
    ((1, 0), (1, 1), 1 - math.sqrt(2) / 2),
])
def test_cosine_distance_examples(a, b, expected):
    assert cosine_distance(a, b) == pytest.approx(expected, abs=1e-15)


def test_cosine_distance_zero_norm():
    with pytest.raises(ZeroNormError):
        cosine_distance([0, 0], [1, 0])


vectors = arrays(np.float64, 5, elements=st.floats(-10, 10, allow_nan=False)).filter(
    lambda v: np.linalg.norm(v) > 1e-3)


@given(vectors, vectors, st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_cosine_properties(a, b, alpha, beta):
    d = cosine_distance(a, b)
    assert 0.0 <= d <= 2.0
    assert d == cosine_distance(b, a)
    assert cosine_distance(alpha * a, beta * b) == pytest.approx(d, abs=1e-12)
    # independent textbook formula
    ref = 1 - np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b))
    assert d == pytest.approx(ref, abs=1e-12)


def test_pairwise_matches_scalar(rng):
    a, b = rng.standard_normal((7, 4)), rng.standard_normal((5, 4))
    d = pairwise_cosine_distance(a, b)
    for i in range(7):
        for j in range(5):
            assert d[i, j] == pytest.approx(cosine_distance(a[i], b[j]), abs=1e-15)


words = st.lists(st.sampled_from(["w0", "w1", "w2", "w3", "w4"]), min_size=1, max_size=4)


@settings(max_examples=60)
@given(words, st.randoms(use_true_random=False))
def test_embedding_depends_on_token_multiset(tokens, r):
    table = WordVectorTable(6, {f"w{i}": np.random.default_rng(i).standard_normal(6) for i in range(5)})
    shuffled = list(tokens)
    r.shuffle(shuffled)
    np.testing.assert_array_equal(embed_class(" ".join(tokens), table), embed_class(" ".join(shuffled), table))


@settings(max_examples=60)
@given(words, arrays(np.float64, 6, elements=st.floats(-5, 5)).filter(lambda v: np.linalg.norm(v) > 1e-3))
def test_mean_and_sum_are_cosine_equivalent(tokens, x):
    table = WordVectorTable(6, {f"w{i}": np.random.default_rng(i).standard_normal(6) for i in range(5)})
    try:
        mean = embed_class(" ".join(tokens), table, reduce="mean")
    except DegenerateEmbeddingError:
        return
    total = embed_class(" ".join(tokens), table, reduce="sum")
    assert cosine_distance(mean, x) == pytest.approx(cosine_distance(total, x), abs=1e-12)
