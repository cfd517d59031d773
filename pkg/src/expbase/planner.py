"""Multi-query plan generation conditioned on the question and retrieved rules."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

from .errors import EmptyQuestion, PlanInvalid
from .facets import CORE_FACETS, FacetIndicatorMap, FacetTables, contains_keyword, facet_indicators, facet_keyword_in, slot_text
from .ports import JsonService, ServiceUnavailable
from .resources import load_table
from .retrieval import FALLBACK, PROCEED, RetrievedExperiences
from .textmodel import tokenize
from .training import TokenModel, coverage_score, sequence_log_prob

GENERIC_SUFFIXES = ("overview", "explained", "guide", "examples", "best practices")


@dataclass(frozen=True)
class QueryPlan:
    queries: tuple[str, ...]
    active_facets: FacetIndicatorMap
    gate_decision: str
    provenance: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.queries:
            raise PlanInvalid("plan needs at least one query")
        if self.gate_decision == FALLBACK and not self.active_facets.is_empty():
            raise PlanInvalid("fallback plans carry no active facets")

    @property
    def M(self) -> int:
        return len(self.queries)

    def to_json(self) -> dict:
        return {
            "queries": list(self.queries),
            "M": self.M,
            "active_facets": self.active_facets.to_json(),
            "gate_decision": self.gate_decision,
            "provenance": list(self.provenance),
        }


def _resolve(base, rule_id: str):
    aliases = getattr(base, "aliases", {}) or {}
    seen = set()
    while rule_id in aliases and rule_id not in seen:
        seen.add(rule_id)
        rule_id = aliases[rule_id]
    return base.rules[rule_id]


def generic_expansions(q: str, n: int) -> list[str]:
    """Facet-free rewrites of ``q``: synonym swaps, then generic suffixes."""
    syn = load_table("synonyms.json")
    toks = tokenize(q)
    out: list[str] = []
    for tok in toks:
        for alt in syn.get(tok, ()):
            out.append(" ".join(alt if t == tok else t for t in toks))
    out.extend(f"{q} {s}" for s in GENERIC_SUFFIXES)
    seen, uniq = {q}, []
    for cand in out:
        if cand not in seen:
            seen.add(cand)
            uniq.append(cand)
    while len(uniq) < n:
        uniq.append(f"{q} {GENERIC_SUFFIXES[len(uniq) % len(GENERIC_SUFFIXES)]}")
    return uniq[:n]


def _facet_combinations(phi: FacetIndicatorMap) -> list[list[tuple[str, str]]]:
    """Facet subsets, largest first, in (time, region, policy, industry) order,
    using each facet's top value; then single-facet secondary values."""
    active = [f for f in CORE_FACETS if f in phi.values]
    combos: list[list[tuple[str, str]]] = []
    for size in range(len(active), 0, -1):
        for subset in itertools.combinations(active, size):
            combos.append([(f, phi.values[f][0]) for f in subset])
    for f in active:
        for v in phi.values[f][1:]:
            combos.append([(f, v)])
    return combos


def _slot(q: str, combo: Sequence[tuple[str, str]]) -> str:
    parts = [q]
    for facet, value in combo:
        text = slot_text(facet, value)
        if not contains_keyword(q, text):
            parts.append(text)
    return " ".join(parts)


def reference_plan(q: str, phi: FacetIndicatorMap, M: int) -> list[str]:
    queries = [q]
    if M == 1:
        return queries
    if phi.is_empty():
        return queries + generic_expansions(q, M - 1)
    combos = _facet_combinations(phi)
    for combo in combos[: M - 1]:
        queries.append(_slot(q, combo))
    full = queries[1]
    pad = generic_expansions(q, M)
    k = 0
    while len(queries) < M:
        queries.append(f"{pad[k]} {full[len(q):].strip()}".strip())
        k += 1
    return queries


def _plan_keywords(rules, tables: FacetTables) -> list[tuple[str, str]]:
    if not rules:
        return []
    phi = facet_indicators(rules, tables)
    return sorted({(f, kw) for f, kws in phi.keywords.items() for kw in kws})


def validate_plan(queries, M: int, decision: str, banned_keywords: Sequence[tuple[str, str]]) -> list[str]:
    """``banned_keywords`` are ``(facet, keyword)`` pairs that a fallback plan must not contain."""
    if not isinstance(queries, list) or len(queries) != M:
        raise PlanInvalid(f"expected {M} queries")
    if not all(isinstance(z, str) and z.strip() for z in queries):
        raise PlanInvalid("queries must be non-empty strings")
    if decision == FALLBACK:
        for z in queries:
            if any(facet_keyword_in(z, f, kw) for f, kw in banned_keywords):
                raise PlanInvalid("fallback plan contains facet keywords")
    return queries


def generate_plan(
    q: str,
    retrieved: RetrievedExperiences,
    base,
    M: int = 3,
    mode: str = "reference",
    service: JsonService | None = None,
    tables: FacetTables | None = None,
) -> QueryPlan:
    """Plan ``M`` search queries.

    Reference mode: ``z_1 = q``; later queries slot facet values of the
    retrieved rules into ``q``; a fallback gate yields facet-free expansions.
    External mode asks ``service`` and validates its answer (one retry), falling
    back to the reference plan if it stays invalid.
    """
    if not q or not q.strip():
        raise EmptyQuestion("question is empty")
    if M < 1:
        raise ValueError("M must be >= 1")
    if mode not in ("reference", "external"):
        raise ValueError(f"unknown planner mode {mode!r}")
    tables = tables or FacetTables.default()
    q = q.strip()
    rules = [_resolve(base, rid) for rid in retrieved.rule_ids] if base is not None else []
    decision = retrieved.gate_decision
    if decision == PROCEED and rules:
        phi = facet_indicators(rules, tables)
    else:
        phi = FacetIndicatorMap.empty()
    provenance = tuple(r.rule_id for r in rules) if decision == PROCEED else ()

    if mode == "external" and service is not None:
        banned = _plan_keywords(rules, tables)
        payload = {
            "question": q,
            "rules": [{"text": r.text, "facets": r.facets.to_json()} for r in rules] if decision == PROCEED else [],
            "facet_keywords": {f: list(k) for f, k in phi.keywords.items()},
            "M": M,
        }
        for _ in range(2):
            try:
                resp = service.post(payload)
                queries = validate_plan(resp.get("queries"), M, decision, banned)
                return QueryPlan(tuple(queries), phi, decision, provenance)
            except (PlanInvalid, ServiceUnavailable, AttributeError):
                continue
    return QueryPlan(tuple(reference_plan(q, phi, M)), phi, decision, provenance)


def score_plan(plan: QueryPlan, phi: FacetIndicatorMap, model: TokenModel, coverage_weight: float = 1.0) -> float:
    """Sum of per-query token log-probabilities plus a weighted coverage bonus."""
    model.check_normalized()
    total = 0.0
    for z in plan.queries:
        toks = tokenize(z)
        if toks:
            total += math.fsum(sequence_log_prob(toks, model))
    return total + coverage_weight * coverage_score(plan, phi)
