"""Per-cluster evidence pooling: hybrid scoring, MMR diversity, de-duplication."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .canonicalize import QATuple, SourceRef
from .clustering import Cluster
from .errors import EmptyCluster
from .textmodel import BM25Index, embed_text, minmax, shingle_jaccard, tokenize

_KIND_ORDER = {"citation": 0, "answer": 1, "rationale": 2}


@dataclass(frozen=True)
class EvidenceItem:
    source: SourceRef
    text: str
    dense_score: float
    lexical_score: float
    fused_score: float
    kind: str = "citation"
    tuple_id: str = ""
    weight: float = 1.0

    @property
    def source_name(self) -> str:
        return self.source.url_or_name


def _sort_key(item: EvidenceItem):
    return (-item.fused_score, _KIND_ORDER.get(item.kind, 9), item.source_name, item.text)


def _pool(cluster: Cluster, tuples: Mapping[str, QATuple]) -> list[tuple[SourceRef, str, str, str, float]]:
    seen: dict[tuple[str, str, str], int] = {}
    pool: list[tuple[SourceRef, str, str, str, float]] = []
    for tid, weight in cluster.members:
        t = tuples[tid]
        raw = []
        for ref in t.citations:
            text = ref.quote or t.answer or t.question
            raw.append((ref, text, "citation"))
        if t.answer:
            raw.append((SourceRef(f"qa:{t.id}"), t.answer, "answer"))
        if t.rationale:
            raw.append((SourceRef(f"qa:{t.id}#rationale"), t.rationale, "rationale"))
        for ref, text, kind in raw:
            key = (ref.url_or_name, text, kind)
            if key in seen:
                k = seen[key]
                if weight > pool[k][4]:
                    pool[k] = (ref, text, kind, tid, weight)
                continue
            seen[key] = len(pool)
            pool.append((ref, text, kind, tid, weight))
    return pool


def aggregate_evidence(
    cluster: Cluster,
    tuples: Mapping[str, QATuple],
    alpha: float = 0.5,
    top_n: int = 20,
) -> list[EvidenceItem]:
    """Pool member citations, answers and rationales and rank them.

    Dense score is cosine to the cluster centroid, lexical score is BM25 of the
    medoid question against the pool; both are scaled by membership weight,
    min-max normalized within the pool, then fused with weight ``alpha``.
    """
    if not cluster.members:
        raise EmptyCluster(cluster.cluster_id)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    pool = _pool(cluster, tuples)
    if not pool:
        raise EmptyCluster(f"{cluster.cluster_id}: no evidence in member tuples")
    index = BM25Index({str(i): text for i, (_, text, _, _, _) in enumerate(pool)})
    lexical = index.scores(tokenize(tuples[cluster.medoid_id].question))
    dense = [float(np.dot(embed_text(text), cluster.centroid)) * w for _, text, _, _, w in pool]
    lexical = [float(s) * w for s, (*_, w) in zip(lexical, pool)]
    nd, nl = minmax(dense), minmax(lexical)
    items = [
        EvidenceItem(ref, text, d, l, alpha * a + (1.0 - alpha) * b, kind, tid, w)
        for (ref, text, kind, tid, w), d, l, a, b in zip(pool, dense, lexical, nd, nl)
    ]
    items.sort(key=_sort_key)
    return items[:top_n]


def mmr_select(items: Sequence[EvidenceItem], lambda_mmr: float = 0.7, n: int = 5) -> list[EvidenceItem]:
    """Greedy maximal marginal relevance over ``fused_score``.

    Redundancy is the max cosine between an item's text embedding and those
    already selected. Ties go to the earlier item in ``items``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 <= lambda_mmr <= 1.0:
        raise ValueError("lambda_mmr must be in [0, 1]")
    if not items:
        return []
    vecs = np.vstack([embed_text(it.text) for it in items])
    sims = vecs @ vecs.T
    remaining = list(range(len(items)))
    chosen: list[int] = []
    while remaining and len(chosen) < n:
        best, best_val = None, -np.inf
        for i in remaining:
            redundancy = max((sims[i, j] for j in chosen), default=0.0)
            val = lambda_mmr * items[i].fused_score - (1.0 - lambda_mmr) * redundancy
            if val > best_val:
                best, best_val = i, val
        chosen.append(best)
        remaining.remove(best)
    return [items[i] for i in chosen]


def dedup_quotes(
    items: Sequence[EvidenceItem],
    jaccard_threshold: float = 0.8,
    per_source_cap: int = 2,
) -> list[EvidenceItem]:
    if not 0.0 < jaccard_threshold <= 1.0:
        raise ValueError("jaccard_threshold must be in (0, 1]")
    kept: list[EvidenceItem] = []
    per_source: dict[str, int] = {}
    for item in sorted(items, key=_sort_key):
        if per_source.get(item.source_name, 0) >= per_source_cap:
            continue
        if any(shingle_jaccard(item.text, k.text) >= jaccard_threshold for k in kept):
            continue
        kept.append(item)
        per_source[item.source_name] = per_source.get(item.source_name, 0) + 1
    return kept
