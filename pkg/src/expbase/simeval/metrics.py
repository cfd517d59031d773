"""Answer and search metrics: EM, token F1, QP@3, page hops, nDCG@10."""

from __future__ import annotations

import math
import re
import string
from collections import Counter
from typing import Iterable, Mapping, Sequence

# articles plus a few function words that never carry the answer
_DROP = {"a", "an", "the", "with", "of", "for"}
_PUNCT = re.compile(f"[{re.escape(string.punctuation)}]")


def normalize_answer(text: str) -> list[str]:
    text = _PUNCT.sub(" ", text.lower())
    return [t for t in text.split() if t not in _DROP]


def exact_match(answer: str, gold: str) -> float:
    return float(normalize_answer(answer) == normalize_answer(gold))


def f1(answer: str, gold: str) -> float:
    a, g = normalize_answer(answer), normalize_answer(gold)
    if not a and not g:
        return 1.0
    common = sum((Counter(a) & Counter(g)).values())
    if common == 0:
        return 0.0
    p, r = common / len(a), common / len(g)
    return 2 * p * r / (p + r)


def query_hit(ranked: Sequence[str], relevant: Iterable[str], depth: int = 3) -> bool:
    rel = set(relevant)
    return any(p in rel for p in ranked[:depth])


def qp_at_3(rankings: Sequence[Sequence[str]], relevant: Iterable[str]) -> float:
    """Fraction of queries whose top-3 pages include an answer-bearing page."""
    if not rankings:
        return 0.0
    rel = set(relevant)
    return sum(query_hit(r, rel) for r in rankings) / len(rankings)


def page_hops(trajectory) -> int:
    visits = getattr(trajectory, "visits", trajectory)
    return len(set(visits))


def dcg(rels: Sequence[float]) -> float:
    return sum(r / math.log2(i + 2) for i, r in enumerate(rels))


def ndcg_at_10(cited: Sequence[str], relevance: Mapping[str, float], k: int = 10) -> float:
    """nDCG over the cited ranking; the ideal ranking uses every relevant page
    named in ``relevance`` (0 when none is relevant)."""
    gains = [float(relevance.get(p, 0.0)) for p in cited[:k]]
    ideal = sorted((float(v) for v in relevance.values()), reverse=True)[:k]
    idcg = dcg(ideal)
    return dcg(gains) / idcg if idcg > 0 else 0.0
