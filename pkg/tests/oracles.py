"""Brute-force reference implementations used to check the library."""

from __future__ import annotations

import itertools
import math

import numpy as np

from expbase.textmodel import embed_text


def okapi(query, doc_id, docs, k1=1.2, b=0.75):
    n = len(docs)
    avgdl = sum(len(d) for d in docs.values()) / n
    d = docs[doc_id]
    total = 0.0
    for t in query:
        df = sum(1 for x in docs.values() if t in x)
        if df == 0:
            continue
        idf = max(0.0, math.log((n - df + 0.5) / (df + 0.5)))
        f = d.count(t)
        total += idf * f * (k1 + 1) / (f + k1 * (1 - b + b * len(d) / avgdl))
    return total


def mmr_oracle(items, lam, n):
    """Greedy MMR: at every step evaluate every remaining item from scratch."""
    chosen = []
    for _ in range(min(n, len(items))):
        best, best_val = None, None
        for i, it in enumerate(items):
            if i in chosen:
                continue
            red = 0.0
            if chosen:
                red = max(float(embed_text(it.text) @ embed_text(items[j].text)) for j in chosen)
            val = lam * it.fused_score - (1 - lam) * red
            if best_val is None or val > best_val:
                best, best_val = i, val
        chosen.append(best)
    return [items[i] for i in chosen]


def topk_oracle(query, rule_texts, k):
    """Score every rule, then sort by (-score, id), scores compared to 12 decimals."""
    q = embed_text(query)
    scored = []
    for rid, text in rule_texts.items():
        v = embed_text(text)
        scored.append((rid, float(q @ v) / (np.linalg.norm(q) * np.linalg.norm(v))))
    scored.sort(key=lambda kv: (-round(kv[1], 12), kv[0]))
    return scored[:k]


def ndcg_oracle(gains, k=10):
    g = list(gains)[:k]
    dcg = sum(x / math.log2(i + 2) for i, x in enumerate(g))
    ideal = sorted(gains, reverse=True)[:k]
    idcg = sum(x / math.log2(i + 2) for i, x in enumerate(ideal))
    return dcg / idcg if idcg else 0.0


def infonce_numeric_grad(f, P, h=1e-6):
    G = np.zeros_like(P)
    for i, j in itertools.product(range(P.shape[0]), range(P.shape[1])):
        E = np.zeros_like(P)
        E[i, j] = h
        G[i, j] = (f(P + E) - f(P - E)) / (2 * h)
    return G
