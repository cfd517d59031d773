"""Deterministic text features: hashed n-gram embeddings, cosine, BM25, shingles."""

from __future__ import annotations

import hashlib
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyText, UnknownDoc

DEFAULT_DIM = 256
NGRAM_RANGE = (3, 5)

_TOKEN_RE = re.compile(r"[^\W_]+")
_NON_ALNUM_RE = re.compile(r"[\W_]+")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumerics. No stemming."""
    return _TOKEN_RE.findall(text.lower())


def _normalize_surface(text: str) -> str:
    norm = _NON_ALNUM_RE.sub(" ", text.lower()).strip()
    # punctuation-only input still embeds, using its raw characters
    return norm or " ".join(text.lower().split())


def _hash64(gram: str) -> int:
    return int.from_bytes(hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest(), "little")


def char_ngrams(text: str, lo: int = NGRAM_RANGE[0], hi: int = NGRAM_RANGE[1]) -> Counter:
    """Character n-grams of each space-padded word (n-grams never cross words)."""
    grams: Counter = Counter()
    for word in text.split():
        padded = f" {word} "
        for n in range(lo, hi + 1):
            for i in range(len(padded) - n + 1):
                grams[padded[i:i + n]] += 1
    return grams


@lru_cache(maxsize=131072)
def _embed_cached(norm: str, dim: int) -> np.ndarray:
    vec = np.zeros(dim, dtype=np.float64)
    for gram, tf in char_ngrams(norm).items():
        h = _hash64(gram)
        sign = 1.0 if (h >> 63) & 1 == 0 else -1.0
        vec[h % dim] += sign * (1.0 + math.log(tf))
    norm_ = np.linalg.norm(vec)
    if norm_ == 0.0:
        # all features cancelled; fall back to an unsigned bucket so the vector stays unit
        vec[_hash64(norm) % dim] = 1.0
        norm_ = 1.0
    vec /= norm_
    vec.setflags(write=False)
    return vec


def embed_text(text: str, dim: int = DEFAULT_DIM) -> np.ndarray:
    """Embed ``text`` as an L2-normalized signed hash of per-word character 3-5-grams.

    Term weights are sublinear (``1 + ln tf``). The same text always yields the
    same (read-only) vector.
    """
    if not isinstance(text, str) or not text.strip():
        raise EmptyText("cannot embed empty text")
    return _embed_cached(_normalize_surface(text), dim)


def embed_many(texts: Iterable[str], dim: int = DEFAULT_DIM) -> np.ndarray:
    rows = [embed_text(t, dim) for t in texts]
    if not rows:
        return np.zeros((0, dim))
    return np.vstack(rows)


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimensionMismatch(f"{u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    c = float(np.dot(u, v) / (nu * nv))
    return min(1.0, max(-1.0, c))


@dataclass(frozen=True)
class CorpusStats:
    doc_count: int
    doc_len: dict[str, int]
    avg_doc_len: float
    term_doc_freq: dict[str, int]
    doc_tf: dict[str, Counter] = field(repr=False)

    @classmethod
    def from_tokens(cls, docs: Mapping[str, Sequence[str]]) -> "CorpusStats":
        doc_tf = {doc_id: Counter(toks) for doc_id, toks in docs.items()}
        doc_len = {doc_id: len(toks) for doc_id, toks in docs.items()}
        df: Counter = Counter()
        for tf in doc_tf.values():
            df.update(tf.keys())
        n = len(docs)
        avg = sum(doc_len.values()) / n if n else 0.0
        return cls(n, doc_len, avg, dict(df), doc_tf)

    @classmethod
    def from_texts(cls, docs: Mapping[str, str]) -> "CorpusStats":
        return cls.from_tokens({doc_id: tokenize(text) for doc_id, text in docs.items()})

    def idf(self, term: str) -> float:
        df = self.term_doc_freq.get(term, 0)
        if df == 0:
            return 0.0
        return max(0.0, math.log((self.doc_count - df + 0.5) / (df + 0.5)))


def bm25_score(
    query_terms: Sequence[str],
    doc_id: str,
    stats: CorpusStats,
    k1: float = 1.2,
    b: float = 0.75,
) -> float:
    """Okapi BM25 of ``doc_id`` for ``query_terms``; IDF is floored at zero."""
    if doc_id not in stats.doc_tf:
        raise UnknownDoc(doc_id)
    tf = stats.doc_tf[doc_id]
    dl = stats.doc_len[doc_id]
    avgdl = stats.avg_doc_len or 1.0
    score = 0.0
    for term in query_terms:
        f = tf.get(term, 0)
        if f == 0:
            continue
        idf = stats.idf(term)
        if idf == 0.0:
            continue
        score += idf * f * (k1 + 1.0) / (f + k1 * (1.0 - b + b * dl / avgdl))
    return score


class BM25Index:
    """Vectorized BM25 over a fixed collection; same formula as :func:`bm25_score`."""

    def __init__(self, docs: Mapping[str, str] | Mapping[str, Sequence[str]], k1: float = 1.2, b: float = 0.75):
        token_docs = {d: (tokenize(t) if isinstance(t, str) else list(t)) for d, t in docs.items()}
        self.stats = CorpusStats.from_tokens(token_docs)
        self.doc_ids = list(token_docs)
        self.k1, self.b = k1, b
        avgdl = self.stats.avg_doc_len or 1.0
        lens = np.array([self.stats.doc_len[d] for d in self.doc_ids], dtype=np.float64)
        self._norm = k1 * (1.0 - b + b * lens / avgdl)
        self._postings: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        acc: dict[str, tuple[list[int], list[float]]] = {}
        for i, d in enumerate(self.doc_ids):
            for term, f in self.stats.doc_tf[d].items():
                rows, vals = acc.setdefault(term, ([], []))
                rows.append(i)
                vals.append(float(f))
        for term, (rows, vals) in acc.items():
            self._postings[term] = (np.array(rows, dtype=np.int64), np.array(vals))

    def scores(self, query_terms: Sequence[str]) -> np.ndarray:
        out = np.zeros(len(self.doc_ids))
        for term in query_terms:
            if term not in self._postings:
                continue
            idf = self.stats.idf(term)
            if idf == 0.0:
                continue
            rows, f = self._postings[term]
            out[rows] += idf * f * (self.k1 + 1.0) / (f + self._norm[rows])
        return out


def shingle_jaccard(a: str, b: str, n: int = 5) -> float:
    """Jaccard similarity of the character ``n``-gram sets of ``a`` and ``b``."""
    if not a or not b:
        raise EmptyText("shingle_jaccard needs two non-empty strings")
    sa = _shingles(a, n)
    sb = _shingles(b, n)
    return len(sa & sb) / len(sa | sb)


def _shingles(s: str, n: int) -> frozenset[str]:
    if len(s) <= n:
        return frozenset([s])
    return frozenset(s[i:i + n] for i in range(len(s) - n + 1))


def minmax(values: Sequence[float]) -> list[float]:
    """Min-max scale to [0, 1]; a constant (or singleton) pool maps to 1.0."""
    if not values:
        return []
    lo, hi = min(values), max(values)
    if hi - lo <= 1e-15:
        return [1.0] * len(values)
    return [(v - lo) / (hi - lo) for v in values]
