"""Deterministic browsing controller: retrieve with each planned query, read
pages, follow links that fit the plan's facets, stop at the planted answer."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from ..facets import FacetIndicatorMap, FacetTables, TimeInterval
from ..textmodel import BM25Index, embed_text, minmax, tokenize
from .corpus import SimCorpus, SimPage, SimQuestion

UNKNOWN = "unknown"


def page_facets(page: SimPage, tables: FacetTables | None = None) -> dict[str, str]:
    """Page labels in the normalized form used by facet indicator maps."""
    tables = tables or FacetTables.default()
    f = page.facets
    out: dict[str, str] = {}
    if f.get("year") is not None:
        y = int(f["year"])
        out["time"] = TimeInterval.parse_iso(f"{y}-01-01/{y}-12-31").iso()
    if f.get("region"):
        out["region"] = tables.resolve_region(str(f["region"])) or str(f["region"]).lower()
    if f.get("policy"):
        out["policy"] = tables.resolve_policy(str(f["policy"])) or str(f["policy"])
    return out


class PageIndex:
    """Fused BM25 + dense ranking over a corpus (equal weights, min-max scaled)."""

    def __init__(self, corpus: SimCorpus, alpha: float = 0.5):
        self.page_ids = sorted(corpus.pages)
        texts = {p: corpus.pages[p].text for p in self.page_ids}
        self.bm25 = BM25Index(texts)
        self.dense = np.vstack([embed_text(texts[p]) for p in self.page_ids])
        self.alpha = alpha
        tables = FacetTables.default()
        self.facets = {p: page_facets(corpus.pages[p], tables) for p in self.page_ids}
        self._cache: dict[str, list[str]] = {}

    def rank(self, query: str) -> list[str]:
        hit = self._cache.get(query)
        if hit is not None:
            return hit
        lex = np.asarray(minmax(list(self.bm25.scores(tokenize(query)))))
        den = np.asarray(minmax(list(self.dense @ embed_text(query))))
        fused = self.alpha * den + (1.0 - self.alpha) * lex
        order = sorted(range(len(self.page_ids)), key=lambda i: (-fused[i], self.page_ids[i]))
        ranked = [self.page_ids[i] for i in order]
        self._cache[query] = ranked
        return ranked


@dataclass(frozen=True)
class Trajectory:
    qid: str
    queries: tuple[str, ...]
    visits: tuple[str, ...]
    cited: tuple[str, ...]
    answer: str
    steps: tuple[tuple[str, str], ...] = field(default=())

    @property
    def n_retrieval_steps(self) -> int:
        return sum(1 for kind, _ in self.steps if kind == "retrieve")

    def to_json(self) -> dict:
        return {
            "qid": self.qid,
            "queries": list(self.queries),
            "visits": list(self.visits),
            "cited": list(self.cited),
            "answer": self.answer,
            "steps": [list(s) for s in self.steps],
        }


def extract_answer(page: SimPage, question: SimQuestion) -> str | None:
    m = re.search(rf"the {re.escape(question.attribute)} for the {re.escape(question.topic)} is (.+?)\. ", page.body + " ")
    return m.group(1) if m else None


def _overlap(page_f: dict[str, str], phi: FacetIndicatorMap) -> int:
    return sum(1 for f, vals in phi.values.items() if vals and page_f.get(f) == vals[0])


def run_controller(
    question: SimQuestion,
    plan,
    corpus: SimCorpus,
    hop_budget: int = 12,
    index: PageIndex | None = None,
    per_query: int = 2,
) -> Trajectory:
    """Walk the plan's queries round-robin, reading ``per_query`` new pages
    from each ranking per round.

    After reading a page, if its facet overlap with the plan beats the next
    ranked page, the controller follows the page's best unvisited out-link
    instead. It stops at a page that carries the question's planted answer.
    """
    index = index or PageIndex(corpus)
    phi = getattr(plan, "active_facets", FacetIndicatorMap.empty())
    queries = tuple(getattr(plan, "queries", plan))
    rankings = [index.rank(z) for z in queries]
    cursors = [0] * len(rankings)
    visits: list[str] = []
    seen: set[str] = set()
    steps: list[tuple[str, str]] = []
    answer_page: str | None = None
    answer = UNKNOWN

    def visit(pid: str) -> bool:
        nonlocal answer_page, answer
        visits.append(pid)
        seen.add(pid)
        steps.append(("read", pid))
        page = corpus.pages[pid]
        if question.qid in page.answer_for:
            span = extract_answer(page, question)
            if span is not None:
                answer_page, answer = pid, span
                return True
        return False

    def next_unvisited(qi: int) -> str | None:
        r = rankings[qi]
        while cursors[qi] < len(r) and r[cursors[qi]] in seen:
            cursors[qi] += 1
        return r[cursors[qi]] if cursors[qi] < len(r) else None

    done = hop_budget <= 0 or not rankings
    while not done:
        progressed = False
        for qi, z in enumerate(queries):
            if done:
                break
            steps.append(("retrieve", z))
            for _ in range(per_query):
                pid = next_unvisited(qi)
                if pid is None or len(visits) >= hop_budget:
                    break
                progressed = True
                if visit(pid):
                    done = True
                    break
                cur = pid
                while not done and len(visits) < hop_budget:
                    nxt = next_unvisited(qi)
                    cur_ov = _overlap(index.facets[cur], phi)
                    if nxt is not None and cur_ov <= _overlap(index.facets[nxt], phi):
                        break
                    links = [l for l in corpus.pages[cur].out_links if l not in seen]
                    if not links:
                        break
                    best = min(links, key=lambda l: (-_overlap(index.facets[l], phi), l))
                    if _overlap(index.facets[best], phi) < cur_ov:
                        break
                    steps.append(("follow", best))
                    if visit(best):
                        done = True
                    cur = best
                if done:
                    break
            if len(visits) >= hop_budget:
                done = True
        if not progressed:
            done = True
    if answer_page is not None:
        steps.append(("answer", answer))
    rest = [p for p in visits if p != answer_page]
    order = {p: i for i, p in enumerate(visits)}
    rest.sort(key=lambda p: (-_overlap(index.facets[p], phi), order[p]))
    cited = ([answer_page] if answer_page else []) + rest
    return Trajectory(question.qid, queries, tuple(visits), tuple(cited), answer, tuple(steps))
