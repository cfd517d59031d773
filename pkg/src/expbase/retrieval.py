"""Query-time experience retrieval, the experience gate, and hard-negative mining."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .textmodel import embed_text

PROCEED = "proceed"
FALLBACK = "fallback"


@dataclass(frozen=True)
class GateConfig:
    k: int = 5
    theta: float = 0.3

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must be in [0, 1]")


@dataclass(frozen=True)
class RetrievedExperiences:
    items: tuple[tuple[str, float], ...]
    k: int
    gate_confidence: float = 0.0
    gate_decision: str = FALLBACK

    @property
    def rule_ids(self) -> list[str]:
        return [rid for rid, _ in self.items]

    @property
    def scores(self) -> list[float]:
        return [s for _, s in self.items]

    def to_json(self) -> dict:
        return {
            "items": [{"rule_id": r, "score": s} for r, s in self.items],
            "k": self.k,
            "gate_confidence": self.gate_confidence,
            "gate_decision": self.gate_decision,
        }


def gate_decision(scores: Sequence[float], theta: float) -> tuple[float, str]:
    """Mean score and the resulting decision (fallback iff empty or mean < theta)."""
    if len(scores) == 0:
        return 0.0, FALLBACK
    conf = float(np.mean(scores))
    return conf, (FALLBACK if conf < theta else PROCEED)


def gate(retrieved: RetrievedExperiences, cfg: GateConfig = GateConfig()) -> RetrievedExperiences:
    conf, decision = gate_decision(retrieved.scores, cfg.theta)
    return replace(retrieved, gate_confidence=conf, gate_decision=decision)


def _project_rows(mat: np.ndarray, projection: np.ndarray | None) -> np.ndarray:
    out = mat if projection is None else mat @ projection
    norms = np.linalg.norm(out, axis=1, keepdims=True)
    norms[norms < 1e-12] = 1.0
    return out / norms


class RuleIndex:
    """Exact cosine index over the rules of one base snapshot."""

    def __init__(self, rule_texts: Mapping[str, str]):
        self.rule_ids = sorted(rule_texts)
        dim = embed_text("x").shape[0]
        self.matrix = (
            np.vstack([embed_text(rule_texts[r]) for r in self.rule_ids]) if self.rule_ids else np.zeros((0, dim))
        )
        self._projected: dict[int, np.ndarray] = {}

    @classmethod
    def from_base(cls, base) -> "RuleIndex":
        cached = getattr(base, "_rule_index", None)
        if cached is None:
            cached = cls({rid: rule.text for rid, rule in base.rules.items()})
            try:
                object.__setattr__(base, "_rule_index", cached)
            except (AttributeError, TypeError):
                pass
        return cached

    def __len__(self) -> int:
        return len(self.rule_ids)

    def scores(self, query: str | np.ndarray, projection: np.ndarray | None = None) -> dict[str, float]:
        if not self.rule_ids:
            return {}
        qv = embed_text(query) if isinstance(query, str) else np.asarray(query, dtype=np.float64)
        qv = _project_rows(qv[None, :], projection)[0]
        key = id(projection) if projection is not None else 0
        mat = self._projected.get(key)
        if mat is None:
            mat = _project_rows(self.matrix, projection)
            if projection is None:
                self._projected[key] = mat
        sims = np.clip(mat @ qv, -1.0, 1.0)
        return {rid: float(s) for rid, s in zip(self.rule_ids, sims)}


def _index(base) -> RuleIndex:
    if isinstance(base, RuleIndex):
        return base
    if isinstance(base, Mapping):
        return RuleIndex({k: (v if isinstance(v, str) else v.text) for k, v in base.items()})
    return RuleIndex.from_base(base)


# scores equal to this many decimals count as tied, so float summation order
# cannot flip the id tie-break
TIE_DECIMALS = 12


def rank_scores(scores: Mapping[str, float]) -> list[tuple[str, float]]:
    return sorted(scores.items(), key=lambda kv: (-round(kv[1], TIE_DECIMALS), kv[0]))


def topk_experiences(
    q: str,
    base,
    cfg: GateConfig = GateConfig(),
    projection: np.ndarray | None = None,
) -> RetrievedExperiences:
    """Exact top-k rules by cosine, ties (to 1e-12) broken by rule id, then gated.

    ``base`` may be an experience base, a :class:`RuleIndex`, or a mapping of
    rule id to text.
    """
    idx = _index(base)
    ranked = rank_scores(idx.scores(q, projection))[: cfg.k]
    return gate(RetrievedExperiences(tuple(ranked), cfg.k), cfg)


@dataclass(frozen=True)
class MinedNegatives:
    rule_ids: tuple[str, ...]
    insufficient: bool


def select_hard_negatives(
    scores: Mapping[str, float],
    positives: Sequence[str],
    pool_size: int = 64,
    margin: float = 0.05,
    n_neg: int = 8,
) -> MinedNegatives:
    """Pick the highest-scoring non-positives from the top ``pool_size``.

    A candidate whose score lies within ``margin`` of any positive's score is
    treated as a likely unlabeled positive and skipped.
    """
    if not positives:
        raise ValueError("need at least one positive")
    if pool_size < n_neg:
        raise ValueError("pool_size must be >= n_neg")
    pos = set(positives)
    pos_scores = [scores[p] for p in pos if p in scores]
    pool = rank_scores(scores)[:pool_size]
    survivors = [
        rid for rid, s in pool
        if rid not in pos and all(abs(s - ps) >= margin for ps in pos_scores)
    ]
    chosen = tuple(survivors[:n_neg])
    return MinedNegatives(chosen, len(chosen) < n_neg)


def mine_hard_negatives(
    q: str,
    positives: Sequence[str],
    base,
    pool_size: int = 64,
    margin: float = 0.05,
    n_neg: int = 8,
    projection: np.ndarray | None = None,
) -> MinedNegatives:
    return select_hard_negatives(_index(base).scores(q, projection), positives, pool_size, margin, n_neg)
