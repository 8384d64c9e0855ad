import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cyclezsl.textfeat import Corpus, build_vocab, read_corpus, tfidf, tokenize


def test_tokenize_rules():
    assert tokenize("The Blue Jay. A bird.") == ["the", "blue", "jay", "a", "bird"]
    assert tokenize("") == []
    assert tokenize("black-billed Cuckoo") == ["black", "billed", "cuckoo"]


def test_vocab_min_df():
    corpus = Corpus.from_texts(["bird red", "bird blue"])
    assert build_vocab(corpus, min_df=2).tokens == ("bird",)
    assert build_vocab(corpus, min_df=1).tokens == ("bird", "blue", "red")


def test_vocab_hand_enumeration():
    corpus = Corpus.from_texts(["Wren sings.", "The wren, the jay!", "Jay; crow"])
    vocab = build_vocab(corpus)
    assert vocab.tokens == ("crow", "jay", "sings", "the", "wren")
    assert vocab.df == (1, 2, 1, 1, 2)
    assert [vocab.index[t] for t in vocab.tokens] == [0, 1, 2, 3, 4]


def test_vocab_empty_is_error():
    with pytest.raises(ValueError):
        build_vocab(Corpus.from_texts(["a", "b"]), min_df=2)
    with pytest.raises(ValueError):
        build_vocab(Corpus.from_texts(["a"]), min_df=0)


def test_corpus_invariants():
    with pytest.raises(ValueError):
        Corpus((), ())
    with pytest.raises(ValueError):
        Corpus(("x", "x"), ("a", "b"))


def test_three_document_hand_computation():
    corpus = Corpus.from_texts(["a b", "a c", "a a d"])
    vocab = build_vocab(corpus)
    assert vocab.tokens == ("a", "b", "c", "d")
    rare = math.log(4 / 2) + 1  # df = 1 of N = 3
    common = math.log(4 / 4) + 1  # df = 3
    raw = np.array([
        [0.5 * common, 0.5 * rare, 0.0, 0.0],
        [0.5 * common, 0.0, 0.5 * rare, 0.0],
        [2 / 3 * common, 0.0, 0.0, 1 / 3 * rare],
    ])
    expected = raw / np.sqrt((raw**2).sum(axis=1, keepdims=True))
    np.testing.assert_allclose(tfidf(corpus, vocab).matrix, expected, rtol=0, atol=1e-15)


def test_common_token_idf_is_one():
    corpus = Corpus.from_texts(["x y", "x z", "x"])
    m = tfidf(corpus, build_vocab(corpus), normalize=False).matrix
    assert m[2, 0] == pytest.approx(1.0)  # tf 1, idf ln(1) + 1


def test_zero_document_row_and_norms():
    corpus = Corpus.from_texts(["owl owl hawk", "...", "hawk"])
    m = tfidf(corpus, build_vocab(corpus)).matrix
    assert np.all(m >= 0)
    np.testing.assert_array_equal(m[1], 0.0)
    np.testing.assert_allclose(np.linalg.norm(m[[0, 2]], axis=1), 1.0, atol=1e-9)


def test_deterministic():
    corpus = Corpus.from_texts(["a b c", "c d", "e a"])
    a = tfidf(corpus, build_vocab(corpus)).matrix
    b = tfidf(corpus, build_vocab(corpus)).matrix
    assert a.tobytes() == b.tobytes()


words = st.sampled_from(["finch", "gull", "tern", "owl", "kite"])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.lists(words, min_size=1, max_size=8), min_size=2, max_size=4), st.integers(0, 3))
def test_more_occurrences_never_lower_tf(docs, which):
    which %= len(docs)
    texts = [" ".join(d) for d in docs]
    token = docs[which][0]
    bumped = list(texts)
    bumped[which] = texts[which] + " " + token
    tf = lambda ts: tfidf(Corpus.from_texts(ts), build_vocab(Corpus.from_texts(ts)), normalize=False)  # noqa: E731
    before, after = tf(texts), tf(bumped)
    col_b = before.vocab.index[token]
    col_a = after.vocab.index[token]
    # same df, so the idf factor is unchanged and the comparison is on tf
    assert after.matrix[which, col_a] >= before.matrix[which, col_b] - 1e-15


def test_no_vocabulary_cap():
    texts = [" ".join(f"w{i}x{j}" for j in range(300)) for i in range(5)]
    corpus = Corpus.from_texts(texts)
    assert len(build_vocab(corpus)) == 1500


def test_read_corpus(tmp_path):
    (tmp_path / "gull.txt").write_text("Sea bird.", encoding="utf-8")
    (tmp_path / "crow.txt").write_text("Black bird.", encoding="utf-8")
    corpus = read_corpus(tmp_path)
    assert corpus.class_ids == ("crow", "gull")
    assert corpus.texts[0] == "Black bird."
