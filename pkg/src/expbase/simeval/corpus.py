"""Seeded synthetic web corpus with planted answers and facet-shifted distractors.

Every topic is a public programme with a true (region, year, policy) regime.
Each question asks for one attribute of one topic. Its answer page states the
attribute under the true regime; each distractor page states a different
value under a regime that differs in exactly one facet. The experience
dataset holds QA tuples about which regime applies to each topic, including
a minority of stale tuples that name an outdated value.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..canonicalize import QATuple, SourceRef
from ..errors import SpecInfeasible
from ..textmodel import embed_text

TOPICS = [
    "apprenticeship training credit", "broadband expansion grant", "childcare subsidy program",
    "clean vehicle rebate", "community solar incentive", "digital media tax credit",
    "export development loan", "farm drainage assistance", "film production incentive",
    "geothermal heating rebate", "heritage restoration grant", "innovation voucher scheme",
    "marine fisheries support", "mineral exploration credit", "nonprofit capacity fund",
    "rural water infrastructure loan", "seniors home renovation credit", "startup equity matching fund",
    "textile recycling grant", "wildfire mitigation program", "youth employment wage subsidy",
    "zero waste packaging incentive", "orchard replanting aid", "museum digitization grant",
]

ATTRIBUTES = [
    ("application deadline", "{n} days"),
    ("filing fee", "${n}"),
    ("funding limit", "${n},000"),
    ("late penalty", "{n} percent"),
    ("interest rate", "{n}.5 percent"),
    ("income threshold", "${n},500"),
    ("minimum headcount", "{n} employees"),
    ("reporting interval", "every {n} months"),
    ("approval timeline", "{n} weeks"),
    ("matching ratio", "{n} to 1"),
]

REGIONS = [
    "Ontario", "Quebec", "Alberta", "Manitoba", "Saskatchewan", "Texas", "Florida", "California",
    "Colorado", "Illinois", "Bavaria", "Lombardy", "Catalonia", "Flanders", "Scotland", "Wales",
    "Queensland", "Victoria", "Singapore", "Japan",
]
RESERVE_REGIONS = ["Brazil", "India", "Switzerland", "Massachusetts", "Washington", "France", "Germany", "Australia"]
YEARS = list(range(2016, 2026))
ISSUERS = ["OEB", "FCA", "CRA", "OSC", "FINRA", "ESMA", "APRA", "MAS"]
KINDS = ["Rule", "Regulation", "Bulletin", "Directive"]

QUESTION_TEMPLATES = [
    "What is the {attribute} for the {topic}?",
    "For the {topic}, what is the {attribute}?",
    "What {attribute} applies to the {topic}?",
]


@dataclass(frozen=True)
class SimSpec:
    n_topics: int = 20
    attributes_per_topic: int = 10
    distractors_per_question: int = 9
    main_tuples: int = 6
    stale_tuples: int = 3
    gap_margin: float = 0.0

    def __post_init__(self):
        if not 1 <= self.n_topics <= len(TOPICS):
            raise SpecInfeasible(f"n_topics must be in [1, {len(TOPICS)}]")
        if not 1 <= self.attributes_per_topic <= len(ATTRIBUTES):
            raise SpecInfeasible(f"attributes_per_topic must be in [1, {len(ATTRIBUTES)}]")
        if self.distractors_per_question < 0:
            raise SpecInfeasible("distractors_per_question must be >= 0")
        if self.stale_tuples >= self.main_tuples:
            raise SpecInfeasible("stale tuples must stay a minority")


@dataclass(frozen=True)
class Regime:
    region: str
    year: int
    policy: str

    def as_dict(self) -> dict:
        return {"region": self.region, "year": self.year, "policy": self.policy}

    def differs_in(self, other: "Regime") -> list[str]:
        return [f for f in ("region", "year", "policy") if getattr(self, f) != getattr(other, f)]


@dataclass(frozen=True)
class SimPage:
    page_id: str
    title: str
    body: str
    facets: dict
    out_links: tuple[str, ...] = ()
    answer_for: tuple[str, ...] = ()
    topic: str = ""

    def to_json(self) -> dict:
        obj = asdict(self)
        obj["out_links"] = list(self.out_links)
        obj["answer_for"] = list(self.answer_for)
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "SimPage":
        return cls(obj["page_id"], obj["title"], obj["body"], dict(obj["facets"]), tuple(obj["out_links"]),
                   tuple(obj["answer_for"]), obj.get("topic", ""))

    @property
    def text(self) -> str:
        return f"{self.title}. {self.body}"


@dataclass(frozen=True)
class SimQuestion:
    qid: str
    text: str
    topic: str
    attribute: str
    template_id: int
    facets: dict

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "SimQuestion":
        return cls(obj["qid"], obj["text"], obj["topic"], obj["attribute"], int(obj["template_id"]), dict(obj["facets"]))


@dataclass
class SimCorpus:
    pages: dict[str, SimPage]
    questions: list[SimQuestion]
    answers: dict[str, str]
    experiences: list[QATuple]
    seed: int
    spec: SimSpec
    stats: dict = field(default_factory=dict)

    def answer_pages(self, qid: str) -> list[str]:
        return sorted(p.page_id for p in self.pages.values() if qid in p.answer_for)

    def validate(self) -> None:
        for p in self.pages.values():
            for link in p.out_links:
                if link not in self.pages:
                    raise SpecInfeasible(f"{p.page_id} links to missing page {link}")
        for q in self.questions:
            hits = self.answer_pages(q.qid)
            if not hits:
                raise SpecInfeasible(f"question {q.qid} has no answer page")
            if not any(self.answers[q.qid] in self.pages[h].body for h in hits):
                raise SpecInfeasible(f"answer for {q.qid} not planted on its page")

    # --- serialization -------------------------------------------------
    def save(self, root: str | Path) -> None:
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        dump = lambda rows: "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)  # noqa: E731
        (root / "pages.jsonl").write_text(dump(self.pages[p].to_json() for p in sorted(self.pages)), encoding="utf-8")
        (root / "questions.jsonl").write_text(dump(q.to_json() for q in self.questions), encoding="utf-8")
        (root / "answers.jsonl").write_text(
            dump({"qid": q, "answer": a} for q, a in sorted(self.answers.items())), encoding="utf-8"
        )
        (root / "experiences.jsonl").write_text(dump(t.to_json() for t in self.experiences), encoding="utf-8")
        meta = {"seed": self.seed, "spec": asdict(self.spec), "stats": self.stats}
        (root / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, root: str | Path) -> "SimCorpus":
        root = Path(root)
        rows = lambda name: [json.loads(l) for l in (root / name).read_text(encoding="utf-8").splitlines() if l.strip()]  # noqa: E731,E741
        meta = json.loads((root / "meta.json").read_text(encoding="utf-8"))
        pages = {p["page_id"]: SimPage.from_json(p) for p in rows("pages.jsonl")}
        return cls(
            pages,
            [SimQuestion.from_json(q) for q in rows("questions.jsonl")],
            {r["qid"]: r["answer"] for r in rows("answers.jsonl")},
            [QATuple.from_json(t) for t in rows("experiences.jsonl")],
            int(meta["seed"]),
            SimSpec(**meta["spec"]),
            meta.get("stats", {}),
        )

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for p in sorted(self.pages):
            h.update(json.dumps(self.pages[p].to_json(), sort_keys=True).encode())
        for q in self.questions:
            h.update(json.dumps(q.to_json(), sort_keys=True).encode())
        for t in self.experiences:
            h.update(json.dumps(t.to_json(), sort_keys=True).encode())
        return h.hexdigest()


def policy_name(rng: np.random.Generator) -> str:
    return f"{rng.choice(ISSUERS)} {rng.choice(KINDS)} {int(rng.integers(10, 99))}"


def _shift(regime: Regime, facet: str, rng: np.random.Generator, avoid: set) -> Regime:
    for _ in range(200):
        if facet == "region":
            cand = Regime(str(rng.choice(REGIONS)), regime.year, regime.policy)
        elif facet == "year":
            cand = Regime(regime.region, int(rng.choice(YEARS)), regime.policy)
        else:
            cand = Regime(regime.region, regime.year, policy_name(rng))
        if cand != regime and cand not in avoid:
            return cand
    raise SpecInfeasible("cannot draw a distinct distractor regime")


def page_body(topic: str, attribute: str, value: str, regime: Regime) -> str:
    return (
        f"The {topic} is administered in {regime.region} under {regime.policy}. "
        f"For the {regime.year} program year, the {attribute} for the {topic} is {value}. "
        f"Applicants to the {topic} should keep records for the {attribute}."
    )


_REGION_QS = ["Which jurisdiction administers the {t}?", "Which jurisdiction administers the {t} program?",
              "Which jurisdiction administers the {t} today?", "Which jurisdiction currently administers the {t}?",
              "In practice, which jurisdiction administers the {t}?", "Which jurisdiction administers the {t} now?"]
_REGION_AS = "The {t} is administered in {v}, so {v} rules apply to the {t}."
_REGION_STALE_QS = _REGION_QS[:3]
_REGION_STALE_AS = "Applications for the {t} were handled in {v}."

_YEAR_QS = ["Which program year applies to the {t}?", "Which program year applies to the {t} program?",
            "Which program year applies to the {t} today?", "Which program year currently applies to the {t}?",
            "In practice, which program year applies to the {t}?", "Which program year applies to the {t} now?"]
_YEAR_AS = "The {t} follows the {v} program year schedule for the {t}."
_YEAR_STALE_QS = _YEAR_QS[:3]
_YEAR_STALE_AS = "The {t} schedule used the {v} calendar."

_POLICY_QS = ["Which regulation governs the {t}?", "Which regulation governs the {t} program?",
              "Which regulation governs the {t} today?", "Which regulation currently governs the {t}?",
              "In practice, which regulation governs the {t}?", "Which regulation governs the {t} now?"]
_POLICY_AS = "The {t} is governed by {v}, which sets the terms of the {t}."
_POLICY_STALE_QS = _POLICY_QS[:3]
_POLICY_STALE_AS = "The {t} was covered by {v}."


def _experience_tuples(k: int, topic: str, truth: Regime, stale: Regime, spec: SimSpec, rng) -> list[QATuple]:
    slug = topic.replace(" ", "-")
    sources = [f"{slug}-handbook", f"{slug}-faq", "program-registry", f"{slug}-bulletin"]
    out = []
    plan = [
        ("region", _REGION_QS, _REGION_AS, truth.region, _REGION_STALE_QS, _REGION_STALE_AS, stale.region),
        ("year", _YEAR_QS, _YEAR_AS, str(truth.year), _YEAR_STALE_QS, _YEAR_STALE_AS, str(stale.year)),
        ("policy", _POLICY_QS, _POLICY_AS, truth.policy, _POLICY_STALE_QS, _POLICY_STALE_AS, stale.policy),
    ]
    for facet, qs, a, v, sqs, sa, sv in plan:
        for i in range(spec.main_tuples):
            src = sources[i % 2]
            out.append(QATuple(f"t{k:02d}-{facet}-{i}", qs[i % len(qs)].format(t=topic), a.format(t=topic, v=v),
                               citations=(SourceRef(src, a.format(t=topic, v=v)),)))
        for i in range(spec.stale_tuples):
            src = sources[2 + i % 2]
            out.append(QATuple(f"t{k:02d}-{facet}-stale{i}", sqs[i % len(sqs)].format(t=topic), sa.format(t=topic, v=sv),
                               citations=(SourceRef(src, sa.format(t=topic, v=sv)),)))
    return out


def build_sim_corpus(spec: SimSpec = SimSpec(), n_pages: int | None = None, seed: int = 0) -> SimCorpus:
    """Generate a corpus; ``n_pages`` (if given) overrides the distractor count.

    Raises :class:`SpecInfeasible` if fewer than 10 pages or fewer pages than
    questions are requested.
    """
    n_questions = spec.n_topics * spec.attributes_per_topic
    if n_pages is not None:
        if n_pages < 10 or n_pages < n_questions:
            raise SpecInfeasible(f"n_pages={n_pages} cannot hold {n_questions} answer pages (min 10)")
        total_distractors = n_pages - n_questions
    else:
        total_distractors = n_questions * spec.distractors_per_question
        if n_questions + total_distractors < 10:
            raise SpecInfeasible("corpus would have fewer than 10 pages")
    rng = np.random.default_rng(seed)
    topic_idx = sorted(rng.choice(len(TOPICS), size=spec.n_topics, replace=False).tolist())
    pages: dict[str, SimPage] = {}
    questions: list[SimQuestion] = []
    answers: dict[str, str] = {}
    experiences: list[QATuple] = []
    groups: list[list[str]] = []
    gaps: list[float] = []
    qn = 0
    for k, ti in enumerate(topic_idx):
        topic = TOPICS[ti]
        truth = Regime(str(rng.choice(REGIONS)), int(rng.choice(YEARS)), policy_name(rng))
        stale = Regime(
            _shift(truth, "region", rng, set()).region,
            _shift(truth, "year", rng, set()).year,
            _shift(truth, "policy", rng, set()).policy,
        )
        experiences.extend(_experience_tuples(k, topic, truth, stale, spec, rng))
        attrs = rng.choice(len(ATTRIBUTES), size=spec.attributes_per_topic, replace=False)
        for a_idx in sorted(attrs.tolist()):
            attribute, fmt = ATTRIBUTES[a_idx]
            qid = f"q{qn:04d}"
            n_distr = total_distractors // n_questions + (1 if qn < total_distractors % n_questions else 0)
            qn += 1
            values = rng.choice(np.arange(2, 98), size=n_distr + 1, replace=False)
            answer = fmt.format(n=int(values[0]))
            tid = int(rng.integers(len(QUESTION_TEMPLATES)))
            q = SimQuestion(qid, QUESTION_TEMPLATES[tid].format(attribute=attribute, topic=topic), topic, attribute, tid,
                            truth.as_dict())
            questions.append(q)
            answers[qid] = answer
            ids = [f"p-{qid}-0"]
            pages[ids[0]] = SimPage(ids[0], f"{topic.title()}: {attribute}", page_body(topic, attribute, answer, truth),
                                    truth.as_dict(), (), (qid,), topic)
            used = {truth}
            taken = {int(v) for v in values}
            qv = embed_text(f"{q.text} {truth.region} {truth.year} {truth.policy}")
            ceiling = float(qv @ embed_text(pages[ids[0]].text)) - spec.gap_margin
            # stale values appear first among the distractors so outdated advice finds a page
            order = ["region", "year", "policy"]
            for d in range(n_distr):
                facet = order[d % 3]
                if d < 3:
                    shifted = Regime(**{**truth.as_dict(), facet: getattr(stale, facet)})
                else:
                    shifted = _shift(truth, facet, rng, used)
                used.add(shifted)
                pid = f"p-{qid}-{d + 1}"
                ids.append(pid)
                page = _distractor(pid, topic, attribute, fmt, int(values[d + 1]), shifted)
                # redraw the value while hashed digits make the distractor outscore the answer page
                spare = [v for v in range(2, 98) if v not in taken]
                while float(qv @ embed_text(page.text)) >= ceiling:
                    if not spare:
                        raise SpecInfeasible(f"no distractor value keeps {qid} answer page ahead")
                    v = spare.pop(int(rng.integers(len(spare))))
                    taken.add(v)
                    page = _distractor(pid, topic, attribute, fmt, v, shifted)
                pages[pid] = page
            groups.append(ids)
            gaps.append(_cosine_gap(q, truth, [pages[i] for i in ids]))
    # links: a small ring inside each question group plus one hop to the next group of the topic
    for g_idx, ids in enumerate(groups):
        nxt = groups[(g_idx + 1) % len(groups)][0]
        for j, pid in enumerate(ids):
            links = sorted({ids[(j + 1) % len(ids)], ids[(j + 2) % len(ids)], nxt} - {pid})
            p = pages[pid]
            pages[pid] = SimPage(p.page_id, p.title, p.body, p.facets, tuple(links), p.answer_for, p.topic)
    stats = {"min_cosine_gap": round(min(gaps), 6) if gaps else 0.0, "n_pages": len(pages), "n_questions": len(questions)}
    corpus = SimCorpus(pages, questions, answers, experiences, seed, spec, stats)
    corpus.validate()
    if gaps and min(gaps) < spec.gap_margin:
        raise SpecInfeasible(f"answer/distractor cosine gap {min(gaps):.4f} below margin {spec.gap_margin}")
    return corpus


def _distractor(pid: str, topic: str, attribute: str, fmt: str, value: int, regime: Regime) -> SimPage:
    return SimPage(pid, f"{topic.title()}: {attribute}", page_body(topic, attribute, fmt.format(n=value), regime),
                   regime.as_dict(), (), (), topic)


def facet_query(q: SimQuestion) -> str:
    f = q.facets
    return f"{q.text} {f['region']} {f['year']} {f['policy']}"


def _cosine_gap(q: SimQuestion, truth: Regime, group: list[SimPage]) -> float:
    """Fully faceted query: cosine to the answer page minus the best distractor."""
    if len(group) < 2:
        return 1.0
    qv = embed_text(f"{q.text} {truth.region} {truth.year} {truth.policy}")
    sims = [float(qv @ embed_text(p.text)) for p in group]
    return sims[0] - max(sims[1:])
