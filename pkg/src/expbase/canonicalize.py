"""QA tuple types, question delexicalization, and paraphrase grouping."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyText, ExpBaseError
from .resources import load_table
from .textmodel import embed_text

PLACEHOLDER_RE = re.compile(r"<(YEAR|NUM|ENT)>", re.IGNORECASE)
_PUNCT_RE = re.compile(r"[\W_]+")


@dataclass(frozen=True, order=True)
class SourceRef:
    url_or_name: str
    quote: str = ""
    rank: int | None = None

    def __post_init__(self):
        if not self.url_or_name:
            raise ValueError("SourceRef.url_or_name must be non-empty")

    def to_json(self) -> dict:
        out: dict = {"source": self.url_or_name}
        if self.quote:
            out["quote"] = self.quote
        if self.rank is not None:
            out["rank"] = self.rank
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "SourceRef":
        return cls(obj.get("source") or obj.get("url_or_name", ""), obj.get("quote") or "", obj.get("rank"))


@dataclass(frozen=True)
class QATuple:
    id: str
    question: str
    answer: str = ""
    rationale: str = ""
    citations: tuple[SourceRef, ...] = ()
    canonical_intent: str = ""

    @property
    def intent(self) -> str:
        return self.canonical_intent or canonicalize_question(self.question)

    def to_json(self) -> dict:
        out: dict = {"id": self.id, "question": self.question}
        if self.answer:
            out["answer"] = self.answer
        if self.rationale:
            out["rationale"] = self.rationale
        out["citations"] = [c.to_json() for c in self.citations]
        if self.canonical_intent:
            out["canonical_intent"] = self.canonical_intent
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "QATuple":
        return cls(
            id=str(obj["id"]),
            question=obj["question"],
            answer=obj.get("answer") or "",
            rationale=obj.get("rationale") or "",
            citations=tuple(SourceRef.from_json(c) for c in obj.get("citations", [])),
            canonical_intent=obj.get("canonical_intent") or "",
        )


@dataclass(frozen=True)
class DelexRule:
    name: str
    pattern: re.Pattern
    replace: str


def default_delex_rules() -> list[DelexRule]:
    return [DelexRule(r["name"], re.compile(r["pattern"]), r["replace"]) for r in load_table("delex_rules.json")]


def _apply_rules(text: str, rules: Sequence[DelexRule]) -> str:
    for rule in rules:
        text = rule.pattern.sub(rule.replace, text)
    return text


def _normalize(text: str) -> str:
    parts = []
    last = 0
    for m in PLACEHOLDER_RE.finditer(text):
        parts.append(_PUNCT_RE.sub(" ", text[last:m.start()].lower()))
        parts.append(f" <{m.group(1).upper()}> ")
        last = m.end()
    parts.append(_PUNCT_RE.sub(" ", text[last:].lower()))
    return " ".join("".join(parts).split())


def canonicalize_question(q: str, delex_rules: Sequence[DelexRule] | None = None) -> str:
    """Map a question to its canonical intent.

    Quoted spans become ``<ENT>``, years ``<YEAR>``, other numbers ``<NUM>``;
    the rest is lowercased with punctuation removed. Idempotent.
    """
    if not q or not q.strip():
        raise EmptyText("empty question")
    rules = default_delex_rules() if delex_rules is None else delex_rules
    # second rule pass catches numbers exposed by punctuation stripping (e.g. "a_1")
    out = _normalize(_apply_rules(_normalize(_apply_rules(q, rules)), rules))
    return out or " ".join(q.lower().split())


def canonicalize_all(tuples: Iterable[QATuple], delex_rules: Sequence[DelexRule] | None = None) -> list[QATuple]:
    rules = default_delex_rules() if delex_rules is None else delex_rules
    return [replace(t, canonical_intent=canonicalize_question(t.question, rules)) for t in tuples]


class _UnionFind:
    def __init__(self, items: Sequence[str]):
        self.parent = {i: i for i in items}

    def find(self, x: str) -> str:
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a: str, b: str) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            lo, hi = sorted((ra, rb))
            self.parent[hi] = lo


def mine_paraphrase_groups(tuples: Sequence[QATuple], threshold: float = 0.35) -> list[list[str]]:
    """Group tuples whose canonical intents have embedding cosine >= ``threshold``.

    Groups are connected components over the pairwise threshold graph, each
    sorted by id, listed in order of their smallest id.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must be in (0, 1]")
    ids = [t.id for t in tuples]
    if not ids:
        return []
    mat = np.vstack([embed_text(t.intent) for t in tuples])
    sims = mat @ mat.T
    uf = _UnionFind(ids)
    n = len(ids)
    for i in range(n):
        for j in range(i + 1, n):
            if ids[i] == ids[j] or sims[i, j] >= threshold - 1e-12:
                uf.union(ids[i], ids[j])
    groups: dict[str, list[str]] = {}
    for i in ids:
        groups.setdefault(uf.find(i), []).append(i)
    return sorted((sorted(set(g)) for g in groups.values()), key=lambda g: g[0])


class DatasetError(ExpBaseError, ValueError):
    pass


def load_dataset(path: str | Path) -> list[QATuple]:
    """Read a QA dataset from JSON Lines; ids must be unique."""
    tuples: list[QATuple] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                t = QATuple.from_json(json.loads(line))
            except (KeyError, ValueError, TypeError) as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from exc
            if t.id in seen:
                raise DatasetError(f"{path}:{lineno}: duplicate id {t.id!r}")
            seen.add(t.id)
            tuples.append(t)
    return tuples


def save_dataset(tuples: Iterable[QATuple], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in tuples:
            fh.write(json.dumps(t.to_json(), sort_keys=True, ensure_ascii=False) + "\n")
