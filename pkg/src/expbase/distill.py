"""Rule distillation: claim consistency, extractive summarizer, rule assembly."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence

import numpy as np

from .canonicalize import QATuple, SourceRef
from .clustering import Cluster
from .errors import CitationLeak, EmptyCluster, EmptyText, SummarizerUnavailable
from .evidence import EvidenceItem
from .facets import FacetSet
from .ports import JsonService, ServiceUnavailable
from .resources import load_table
from .textmodel import embed_text, tokenize

POSITIVE = "positive"
NEGATED = "negated"

_SENT_SPLIT_RE = re.compile(r"(?<=[.!?])\s+")
_NEUTRAL_TOKENS = {"do", "does", "did", "yes"}


def split_sentences(text: str) -> list[str]:
    return [s.strip() for s in _SENT_SPLIT_RE.split(text.strip()) if s.strip()]


def _stem(tok: str) -> str:
    if len(tok) > 3 and tok.endswith("s") and not tok.endswith("ss"):
        return tok[:-1]
    return tok


def _markers() -> dict[str, list[str]]:
    return load_table("markers.json")


def claim_key_and_polarity(sentence: str) -> tuple[str, str]:
    """Negation-insensitive claim key plus its polarity."""
    negations = set(_markers()["negation"])
    toks = tokenize(sentence.lower().replace("n't", " not"))
    n_neg = sum(t in negations for t in toks)
    key = " ".join(_stem(t) for t in toks if t not in negations and t not in _NEUTRAL_TOKENS)
    return key, (NEGATED if n_neg % 2 else POSITIVE)


@dataclass(frozen=True)
class Claim:
    text: str
    polarity: str
    support_count: int
    source_ids: tuple[str, ...]
    key: str = ""

    def __post_init__(self):
        if self.support_count != len(self.source_ids) or self.support_count < 1:
            raise ValueError("support_count must equal the number of distinct sources (>= 1)")


@dataclass(frozen=True)
class FilteredClaims:
    kept: list[Claim]
    folded_caveats: list[Claim]
    flagged: list[Claim]


def extract_claims(statements: Sequence[tuple[str, str]]) -> list[Claim]:
    """Group ``(source_id, text)`` sentences into claims by key and polarity."""
    groups: dict[tuple[str, str], tuple[str, list[str]]] = {}
    order: list[tuple[str, str]] = []
    for sid, text in statements:
        for sent in split_sentences(text):
            key, pol = claim_key_and_polarity(sent)
            if not key:
                continue
            if (key, pol) not in groups:
                groups[(key, pol)] = (sent, [])
                order.append((key, pol))
            srcs = groups[(key, pol)][1]
            if sid not in srcs:
                srcs.append(sid)
    return [
        Claim(groups[k][0], k[1], len(groups[k][1]), tuple(sorted(groups[k][1])), k[0])
        for k in order
    ]


def consistency_filter(claims: Sequence[Claim]) -> FilteredClaims:
    """Majority polarity wins; minority with support >= 2 folds into caveats,
    minority with support 1 is flagged; exact ties flag everything."""
    by_key: dict[str, list[Claim]] = {}
    for c in claims:
        by_key.setdefault(c.key or claim_key_and_polarity(c.text)[0], []).append(c)
    kept, folded, flagged = [], [], []
    for group in by_key.values():
        pos = sum(c.support_count for c in group if c.polarity == POSITIVE)
        neg = sum(c.support_count for c in group if c.polarity == NEGATED)
        if pos == neg and pos > 0:
            flagged.extend(group)
            continue
        majority = POSITIVE if pos > neg else NEGATED
        for c in group:
            if c.polarity == majority:
                kept.append(c)
            elif c.support_count >= 2:
                folded.append(c)
            else:
                flagged.append(c)
    return FilteredClaims(kept, folded, flagged)


@dataclass(frozen=True)
class RuleDraft:
    core_guidance: str
    conditions: tuple[str, ...] = ()
    edge_cases: tuple[str, ...] = ()
    failure_modes: tuple[str, ...] = ()
    caveats: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.core_guidance.strip():
            raise ValueError("core_guidance must be non-empty")

    def to_json(self) -> dict:
        return {
            "core_guidance": self.core_guidance,
            "conditions": list(self.conditions),
            "edge_cases": list(self.edge_cases),
            "failure_modes": list(self.failure_modes),
            "caveats": list(self.caveats),
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "RuleDraft":
        return cls(
            obj["core_guidance"],
            tuple(obj.get("conditions", ())),
            tuple(obj.get("edge_cases", ())),
            tuple(obj.get("failure_modes", ())),
            tuple(obj.get("caveats", ())),
        )


def _has_marker(sentence: str, markers: Sequence[str]) -> bool:
    toks = tokenize(sentence)
    joined = f" {' '.join(toks)} "
    return any(f" {' '.join(tokenize(m))} " in joined for m in markers)


def summarize_cluster(evidence: Sequence[EvidenceItem], answers: Sequence[str]) -> RuleDraft:
    """Deterministic extractive summary of a cluster.

    The core guidance is the best-supported majority-consistent answer
    sentence, ties going to the one closest to the centroid of all answer
    sentences; minority claims become caveats.
    """
    texts = [a for a in answers if a and a.strip()]
    if not texts:
        texts = [e.text for e in evidence if e.text.strip()]
    if not texts:
        raise EmptyCluster("nothing to summarize")
    statements = [(f"a{i:04d}", t) for i, t in enumerate(texts)]
    claims = extract_claims(statements)
    filtered = consistency_filter(claims)
    kept_keys = {(c.key, c.polarity) for c in filtered.kept}

    sentences: list[str] = []
    for _, t in statements:
        for s in split_sentences(t):
            if s not in sentences:
                sentences.append(s)
    if not sentences:
        raise EmptyCluster("no sentences in cluster answers")
    vecs = np.vstack([embed_text(s) for s in sentences])
    centroid = vecs.sum(axis=0)
    centroid /= np.linalg.norm(centroid) or 1.0
    support = {(c.key, c.polarity): c.support_count for c in filtered.kept}
    candidates = [i for i, s in enumerate(sentences) if claim_key_and_polarity(s) in kept_keys] or list(range(len(sentences)))
    # best-supported claim first, then closeness to the centroid
    core_idx = max(
        candidates,
        key=lambda i: (support.get(claim_key_and_polarity(sentences[i]), 0), float(vecs[i] @ centroid), -i),
    )
    core = sentences[core_idx]

    markers = _markers()
    rest = [s for i, s in enumerate(sentences) if i != core_idx and claim_key_and_polarity(s) in kept_keys]
    caveat_claims = filtered.folded_caveats + filtered.flagged
    return RuleDraft(
        core,
        tuple(s for s in rest if _has_marker(s, markers["condition"])),
        tuple(s for s in rest if _has_marker(s, markers["edge_case"])),
        tuple(s for s in rest if _has_marker(s, markers["failure_mode"])),
        tuple(c.text for c in caveat_claims),
    )


class Summarizer(Protocol):
    def __call__(self, evidence: Sequence[EvidenceItem], answers: Sequence[str], rationales: Sequence[str] = ()) -> RuleDraft: ...


class ExtractiveSummarizer:
    def __call__(self, evidence, answers, rationales=()):
        return summarize_cluster(evidence, answers)


class ExternalSummarizer:
    """Chat-completion backed summarizer behind a JSON service."""

    def __init__(self, service: JsonService, instructions: str | None = None):
        self.service = service
        self.instructions = instructions or _default_prompt()

    def __call__(self, evidence, answers, rationales=()):
        if not answers and not evidence:
            raise EmptyCluster("nothing to summarize")
        payload = {
            "answers": list(answers),
            "rationales": list(rationales),
            "citations": [{"source": e.source_name, "quote": e.text} for e in evidence if e.kind == "citation"],
            "instructions": self.instructions,
        }
        try:
            resp = self.service.post(payload)
        except ServiceUnavailable as exc:
            raise SummarizerUnavailable(str(exc)) from exc
        try:
            return RuleDraft.from_json(resp)
        except (KeyError, ValueError, TypeError) as exc:
            raise SummarizerUnavailable(f"malformed summarizer response: {exc}") from exc


def _default_prompt() -> str:
    from importlib import resources

    return resources.files("expbase.data").joinpath("summarizer_prompt.txt").read_text(encoding="utf-8")


@dataclass(frozen=True)
class ExperienceRule:
    rule_id: str
    draft: RuleDraft
    citations: tuple[SourceRef, ...]
    facets: FacetSet
    coverage: float
    confidence: float
    cluster_id: str
    version: int
    retrieval_text: str = field(default="")

    @property
    def text(self) -> str:
        """Text embedded for retrieval."""
        return self.retrieval_text or " ".join((self.draft.core_guidance, *self.draft.conditions))

    def to_json(self) -> dict:
        out = {
            "rule_id": self.rule_id,
            "rule": self.draft.to_json(),
            "citations": [c.to_json() for c in self.citations],
            "facets": self.facets.to_json(),
            "coverage": self.coverage,
            "confidence": self.confidence,
            "provenance": {"cluster_id": self.cluster_id, "version": self.version},
        }
        if self.retrieval_text:
            out["retrieval_text"] = self.retrieval_text
        return out

    @classmethod
    def from_json(cls, obj: Mapping) -> "ExperienceRule":
        return cls(
            obj["rule_id"],
            RuleDraft.from_json(obj["rule"]),
            tuple(SourceRef.from_json(c) for c in obj["citations"]),
            FacetSet.from_json(obj["facets"]),
            float(obj["coverage"]),
            float(obj["confidence"]),
            obj["provenance"]["cluster_id"],
            int(obj["provenance"]["version"]),
            obj.get("retrieval_text", ""),
        )

    def content(self) -> dict:
        """Serialized form without identity fields (id, provenance)."""
        obj = self.to_json()
        del obj["rule_id"], obj["provenance"]
        return obj


def rule_id_for(cluster_id: str) -> str:
    return f"r{cluster_id[1:]}" if cluster_id.startswith("c") else f"r-{cluster_id}"


def member_coverage(cluster: Cluster, tuples: Mapping[str, QATuple]) -> float:
    """Fraction of answered members whose claims all agree with the majority."""
    answered = [m for m in cluster.member_ids if tuples[m].answer.strip()]
    if not answered:
        return 1.0
    claims = extract_claims([(m, tuples[m].answer) for m in answered])
    filtered = consistency_filter(claims)
    bad = {sid for c in filtered.folded_caveats + filtered.flagged for sid in c.source_ids}
    return sum(m not in bad for m in answered) / len(answered)


def assemble_rule(
    draft: RuleDraft,
    cluster: Cluster,
    evidence: Sequence[EvidenceItem],
    facets: FacetSet,
    tuples: Mapping[str, QATuple],
    version: int = 1,
    rule_id: str | None = None,
    retrieval_text: str = "",
) -> ExperienceRule:
    """Build the rule record; citations come from the selected evidence.

    Raises :class:`CitationLeak` if a cited source is not among the cluster
    members' citations.
    """
    union = {c.url_or_name for m in cluster.member_ids for c in tuples[m].citations}
    cited = [e for e in evidence if e.kind == "citation"]
    leaks = sorted({e.source_name for e in cited if e.source_name not in union})
    if leaks:
        raise CitationLeak(f"{cluster.cluster_id}: sources outside cluster citations: {leaks}")
    refs = sorted({SourceRef(e.source.url_or_name, e.source.quote, e.source.rank) for e in cited}, key=lambda r: (r.url_or_name, r.quote))
    scored = cited or list(evidence)
    confidence = float(np.mean([e.fused_score for e in scored])) if scored else 0.0
    return ExperienceRule(
        rule_id or rule_id_for(cluster.cluster_id),
        draft,
        tuple(refs),
        facets,
        round(member_coverage(cluster, tuples), 10),
        round(min(1.0, max(0.0, confidence)), 10),
        cluster.cluster_id,
        version,
        retrieval_text,
    )


def sentence_fallback(documents: Sequence[str]) -> list[QATuple]:
    """Turn raw documents into answerless tuples, one per sentence."""
    if not documents:
        raise EmptyText("no documents")
    out: list[QATuple] = []
    for d, doc in enumerate(documents):
        for k, sent in enumerate(split_sentences(doc or "")):
            out.append(QATuple(f"s{d:04d}.{k:03d}", sent, citations=(SourceRef(f"doc-{d}", sent),)))
    if not out:
        raise EmptyText("documents contain no sentences")
    return out
