"""Leakage stress transforms over a synthetic corpus, each invertible from its mapping."""

from __future__ import annotations

import re
from dataclasses import dataclass, replace

import numpy as np

from ..canonicalize import QATuple, SourceRef
from ..errors import MissingAnnotations
from .corpus import QUESTION_TEMPLATES, REGIONS, RESERVE_REGIONS, SimCorpus, SimPage, SimQuestion

KINDS = ("entity_randomized", "time_shifted", "template_remix")
_YEAR_RE = re.compile(r"\b((?:19|20)\d{2})\b")


@dataclass(frozen=True)
class StressResult:
    corpus: SimCorpus
    kind: str
    mapping: dict


def _check_annotations(corpus: SimCorpus) -> None:
    for q in corpus.questions:
        if not q.topic or not q.attribute or q.template_id < 0 or not q.facets:
            raise MissingAnnotations(f"question {q.qid} lacks topic/attribute/template/facet annotations")
    for p in corpus.pages.values():
        if not p.facets:
            raise MissingAnnotations(f"page {p.page_id} lacks facet labels")


def _sub_words(text: str, mapping: dict[str, str]) -> str:
    live = {k: v for k, v in mapping.items() if k != v}
    if not live:
        return text
    rx = re.compile(r"\b(" + "|".join(re.escape(k) for k in sorted(live, key=len, reverse=True)) + r")\b")
    return rx.sub(lambda m: live[m.group(1)], text)


def _sub_years(text: str, shift: int) -> str:
    return _YEAR_RE.sub(lambda m: str(int(m.group(1)) + shift), text) if shift else text


def _map_text_everywhere(corpus: SimCorpus, fn, facet_fn) -> SimCorpus:
    pages = {
        pid: replace(p, title=fn(p.title), body=fn(p.body), facets=facet_fn(p.facets))
        for pid, p in corpus.pages.items()
    }
    questions = [replace(q, text=fn(q.text), facets=facet_fn(q.facets)) for q in corpus.questions]
    experiences = [
        QATuple(t.id, fn(t.question), fn(t.answer), fn(t.rationale),
                tuple(SourceRef(c.url_or_name, fn(c.quote), c.rank) for c in t.citations), t.canonical_intent and fn(t.canonical_intent))
        for t in corpus.experiences
    ]
    answers = {qid: fn(a) for qid, a in corpus.answers.items()}
    return SimCorpus(pages, questions, answers, experiences, corpus.seed, corpus.spec, dict(corpus.stats))


def entity_mapping(seed: int) -> dict[str, str]:
    """A seeded permutation of every region name the generator can emit."""
    domain = sorted(set(REGIONS) | set(RESERVE_REGIONS))
    perm = np.random.default_rng(seed).permutation(len(domain))
    return {a: domain[int(i)] for a, i in zip(domain, perm)}


def _remix_body(body: str, order: list[int]) -> str:
    sents = [s.strip() for s in re.split(r"(?<=\.)\s+", body.strip()) if s.strip()]
    if len(sents) != len(order):
        return body
    return " ".join(sents[i] for i in order)


def stress_transform(
    corpus: SimCorpus,
    kind: str,
    seed: int = 0,
    mapping: dict | None = None,
) -> StressResult:
    """Apply one stress transform consistently to questions, pages, experiences and key.

    ``mapping`` overrides the seeded mapping; an identity mapping leaves the
    corpus unchanged.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown stress kind {kind!r}")
    _check_annotations(corpus)
    if kind == "entity_randomized":
        m = dict(mapping) if mapping is not None else entity_mapping(seed)
        fn = lambda s: _sub_words(s, m)  # noqa: E731
        facet_fn = lambda f: {**f, "region": m.get(f["region"], f["region"])} if "region" in f else dict(f)  # noqa: E731
        return StressResult(_map_text_everywhere(corpus, fn, facet_fn), kind, m)
    if kind == "time_shifted":
        shift = int(mapping["years"]) if mapping is not None else 1 + seed % 5
        fn = lambda s: _sub_years(s, shift)  # noqa: E731
        facet_fn = lambda f: {**f, "year": int(f["year"]) + shift} if "year" in f else dict(f)  # noqa: E731
        return StressResult(_map_text_everywhere(corpus, fn, facet_fn), kind, {"years": shift})
    # template_remix
    if mapping is not None:
        tmap = {int(k): int(v) for k, v in mapping["templates"].items()}
        order = list(mapping["clauses"])
    else:
        rng = np.random.default_rng(seed)
        perm = rng.permutation(len(QUESTION_TEMPLATES))
        tmap = {i: int(perm[i]) for i in range(len(QUESTION_TEMPLATES))}
        order = [int(i) for i in rng.permutation(3)]
    questions = [
        replace(q, text=QUESTION_TEMPLATES[tmap[q.template_id]].format(attribute=q.attribute, topic=q.topic),
                template_id=tmap[q.template_id])
        for q in corpus.questions
    ]
    pages = {pid: replace(p, body=_remix_body(p.body, order)) for pid, p in corpus.pages.items()}
    out = SimCorpus(pages, questions, dict(corpus.answers), list(corpus.experiences), corpus.seed, corpus.spec, dict(corpus.stats))
    return StressResult(out, kind, {"templates": tmap, "clauses": order})


def invert(result: StressResult) -> SimCorpus:
    """Undo a transform using its stored mapping."""
    m = result.mapping
    if result.kind == "entity_randomized":
        inv = {v: k for k, v in m.items()}
        return stress_transform(result.corpus, result.kind, mapping=inv).corpus
    if result.kind == "time_shifted":
        return stress_transform(result.corpus, result.kind, mapping={"years": -m["years"]}).corpus
    inv_t = {v: k for k, v in m["templates"].items()}
    order = m["clauses"]
    inv_o = [order.index(i) for i in range(len(order))]
    return stress_transform(result.corpus, result.kind, mapping={"templates": inv_t, "clauses": inv_o}).corpus


def oracle_answers(corpus: SimCorpus) -> dict[str, str]:
    """Read each question's answer off its answer page."""
    from .controller import extract_answer

    out = {}
    for q in corpus.questions:
        span = None
        for pid in corpus.answer_pages(q.qid):
            span = extract_answer(corpus.pages[pid], q)
            if span:
                break
        out[q.qid] = span or "unknown"
    return out


def question_by_id(corpus: SimCorpus) -> dict[str, SimQuestion]:
    return {q.qid: q for q in corpus.questions}


def page_ids(corpus: SimCorpus) -> list[str]:
    return sorted(corpus.pages)


__all__ = ["KINDS", "StressResult", "stress_transform", "invert", "oracle_answers", "entity_mapping", "SimPage"]
