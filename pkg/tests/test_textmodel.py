import math
from collections import Counter

import numpy as np
import pytest

from oracles import okapi

from expbase.errors import DimensionMismatch, EmptyText, UnknownDoc
from expbase.textmodel import (
    BM25Index,
    CorpusStats,
    bm25_score,
    cosine,
    embed_text,
    minmax,
    shingle_jaccard,
    tokenize,
)


def _bag_cosine(a: str, b: str) -> float:
    # unhashed bag of per-word character 3-5-grams
    def bag(s):
        c = Counter()
        for w in s.lower().split():
            p = f" {w} "
            for n in range(3, 6):
                c.update(p[i:i + n] for i in range(len(p) - n + 1))
        return c

    x, y = bag(a), bag(b)
    dot = sum(x[k] * y[k] for k in x)
    return dot / math.sqrt(sum(v * v for v in x.values()) * sum(v * v for v in y.values()))


def test_embed_is_deterministic_and_unit():
    u = embed_text("risk")
    assert cosine(u, embed_text("risk")) == 1.0
    assert np.array_equal(u, embed_text("risk"))
    assert abs(np.linalg.norm(embed_text("portfolio diversification")) - 1.0) < 1e-9


@pytest.mark.parametrize("text", ["", "   ", "\n\t"])
def test_embed_empty_raises(text):
    with pytest.raises(EmptyText):
        embed_text(text)


def test_embed_word_order_beats_unrelated():
    a, b, c = "portfolio diversification", "diversification portfolio", "protein folding"
    # the unhashed oracle agrees on the direction
    assert _bag_cosine(a, b) > _bag_cosine(a, c)
    assert cosine(embed_text(a), embed_text(b)) > cosine(embed_text(a), embed_text(c))


def test_embed_unit_norm_random_strings():
    rng = np.random.default_rng(0)
    alphabet = list("abcdefghij klmnop!?.,")
    for _ in range(200):
        s = "".join(rng.choice(alphabet, size=int(rng.integers(1, 40))))
        if not s.strip():
            continue
        assert abs(np.linalg.norm(embed_text(s)) - 1.0) < 1e-9


def test_cosine_examples():
    e1, e2 = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    assert cosine(e1, e1) == 1.0
    assert cosine(e1, e2) == 0.0
    c = cosine(np.array([1.0, 1.0]) / math.sqrt(2), e1)
    assert abs(c - math.sqrt(2) / 2) < 1e-9
    assert round(c, 8) == 0.70710678
    with pytest.raises(DimensionMismatch):
        cosine(np.ones(3), np.ones(4))


def test_cosine_symmetric_and_bounded():
    rng = np.random.default_rng(1)
    U = rng.normal(size=(10_000, 8))
    V = rng.normal(size=(10_000, 8))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    for u, v in zip(U[:2000], V[:2000]):
        c = cosine(u, v)
        assert -1.0 <= c <= 1.0
        assert abs(c - cosine(v, u)) <= 1e-12
    vec = np.einsum("ij,ij->i", U, V)
    assert np.all(np.abs(vec) <= 1.0 + 1e-12)


def test_bm25_hand_value_single_doc():
    stats = CorpusStats.from_tokens({"d": ["a", "a", "b"]})
    # one document containing the term: ln((1-1+.5)/(1+.5)) < 0, floored to 0
    assert bm25_score(["a"], "d", stats) == 0.0


def test_bm25_hand_value_two_docs():
    docs = {"d1": ["a", "a", "b"], "d2": ["b", "c"], "d3": ["c"]}
    stats = CorpusStats.from_tokens(docs)
    idf = math.log((3 - 1 + 0.5) / (1 + 0.5))
    avgdl = 6 / 3
    expected = idf * 2 * 2.2 / (2 + 1.2 * (0.25 + 0.75 * 3 / avgdl))
    assert bm25_score(["a"], "d1", stats) == pytest.approx(expected, abs=1e-15)
    assert bm25_score(["zzz"], "d1", stats) == 0.0
    with pytest.raises(UnknownDoc):
        bm25_score(["a"], "nope", stats)


def test_bm25_matches_brute_force_and_index():
    rng = np.random.default_rng(3)
    vocab = [f"t{i}" for i in range(12)]
    for _ in range(30):
        n = int(rng.integers(1, 21))
        docs = {f"d{i}": list(rng.choice(vocab, size=int(rng.integers(1, 15)))) for i in range(n)}
        stats = CorpusStats.from_tokens(docs)
        index = BM25Index(docs)
        q = list(rng.choice(vocab, size=3))
        fast = index.scores(q)
        for i, d in enumerate(index.doc_ids):
            ref = okapi(q, d, docs)
            assert bm25_score(q, d, stats) == pytest.approx(ref, rel=1e-12, abs=1e-15)
            assert fast[i] == pytest.approx(ref, rel=1e-12, abs=1e-15)


def test_bm25_monotone_in_tf():
    base = {"d0": ["x", "y"], "d1": ["y", "z"], "d2": ["z", "w"], "d3": ["w"]}
    prev = -1.0
    for extra in range(6):
        docs = dict(base, d0=["x"] * (1 + extra) + ["y"])
        s = bm25_score(["x"], "d0", CorpusStats.from_tokens(docs))
        assert s >= prev
        prev = s


def test_shingle_jaccard_examples():
    assert shingle_jaccard("abcdef", "abcdeg", 5) == pytest.approx(1 / 3)
    assert shingle_jaccard("same text", "same text") == 1.0
    assert shingle_jaccard("abcdefg", "uvwxyz1") == 0.0
    assert shingle_jaccard("abcdefgh", "bcdefxyz") == shingle_jaccard("bcdefxyz", "abcdefgh")
    with pytest.raises(EmptyText):
        shingle_jaccard("", "abc")


def test_tokenize_and_minmax():
    assert tokenize("Q3-2024, Ontario's tax!") == ["q3", "2024", "ontario", "s", "tax"]
    assert minmax([2.0, 4.0, 3.0]) == [0.0, 1.0, 0.5]
    assert minmax([5.0, 5.0]) == [1.0, 1.0]
    assert minmax([]) == []
