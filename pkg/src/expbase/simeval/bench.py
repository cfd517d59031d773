"""End-to-end evaluation on the synthetic corpus and the ablation table."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from ..config import PipelineConfig
from ..pipeline import BuildOptions, build_base
from ..planner import generate_plan
from ..retrieval import FALLBACK, GateConfig, RetrievedExperiences, topk_experiences
from .controller import PageIndex, run_controller
from .corpus import SimCorpus, SimSpec, build_sim_corpus
from .metrics import exact_match, f1, ndcg_at_10, page_hops, qp_at_3

VARIANTS = ("full", "no_merge", "no_sentence_embed", "k1")
GENERIC = "generic"


def variant_settings(variant: str, cfg: PipelineConfig) -> tuple[BuildOptions, GateConfig, bool]:
    """Build options, gate config and whether the planner is forced generic."""
    k, theta = cfg.retrieval.k, cfg.retrieval.theta
    if variant == "full":
        return BuildOptions(), GateConfig(k, theta), False
    if variant == "no_merge":
        return BuildOptions(merge=False), GateConfig(k, theta), False
    if variant == "no_sentence_embed":
        return BuildOptions(sentence_embed=False), GateConfig(k, theta), False
    if variant == "k1":
        return BuildOptions(), GateConfig(1, theta), False
    if variant == GENERIC:
        return BuildOptions(), GateConfig(k, theta), True
    raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS + (GENERIC,)}")


@dataclass(frozen=True)
class EvalReport:
    variant: str
    per_question: tuple[dict, ...]
    aggregate: dict
    config_digest: str
    seed: int

    def to_json(self) -> dict:
        return {
            "variant": self.variant,
            "aggregate": self.aggregate,
            "per_question": list(self.per_question),
            "config_digest": self.config_digest,
            "seed": self.seed,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=1) + "\n"


def _r(x: float) -> float:
    return round(float(x), 6)


def evaluate(
    corpus: SimCorpus,
    base,
    cfg: PipelineConfig = PipelineConfig(),
    gate_cfg: GateConfig | None = None,
    generic: bool = False,
    variant: str = "full",
    index: PageIndex | None = None,
    limit: int | None = None,
) -> EvalReport:
    """Retrieve -> plan -> browse for every question and score the trajectories."""
    gate_cfg = gate_cfg or GateConfig(cfg.retrieval.k, cfg.retrieval.theta)
    index = index or PageIndex(corpus)
    rows = []
    for q in corpus.questions[:limit]:
        if generic:
            retrieved = RetrievedExperiences((), gate_cfg.k, 0.0, FALLBACK)
        else:
            retrieved = topk_experiences(q.text, base, gate_cfg)
        plan = generate_plan(q.text, retrieved, base, cfg.planner.M)
        traj = run_controller(q, plan, corpus, cfg.sim.hop_budget, index)
        relevant = corpus.answer_pages(q.qid)
        gold = corpus.answers[q.qid]
        rows.append({
            "qid": q.qid,
            "gate": retrieved.gate_decision,
            "gate_confidence": _r(retrieved.gate_confidence),
            "queries": list(plan.queries),
            "answer": traj.answer,
            "em": exact_match(traj.answer, gold),
            "f1": _r(f1(traj.answer, gold)),
            "qp3": _r(qp_at_3([index.rank(z) for z in plan.queries], relevant)),
            "hops": page_hops(traj),
            "ndcg10": _r(ndcg_at_10(list(traj.cited), {p: 1.0 for p in relevant})),
        })
    n = len(rows) or 1
    agg = {
        "n_questions": len(rows),
        "em": _r(sum(r["em"] for r in rows) / n),
        "f1": _r(sum(r["f1"] for r in rows) / n),
        "qp3": _r(sum(r["qp3"] * len(r["queries"]) for r in rows) / max(1, sum(len(r["queries"]) for r in rows))),
        "page_hops": _r(sum(r["hops"] for r in rows) / n),
        "ndcg10": _r(sum(r["ndcg10"] for r in rows) / n),
        "proceed_rate": _r(sum(r["gate"] != FALLBACK for r in rows) / n),
        "n_rules": len(getattr(base, "rules", {}) or {}),
    }
    return EvalReport(variant, tuple(rows), agg, cfg.digest, corpus.seed)


def default_spec(cfg: PipelineConfig) -> SimSpec:
    s = cfg.sim
    return SimSpec(s.n_topics, s.attributes_per_topic, s.distractors_per_question)


def run_ablation(
    variants=VARIANTS + (GENERIC,),
    cfg: PipelineConfig = PipelineConfig(),
    corpus: SimCorpus | None = None,
    seed: int | None = None,
) -> dict[str, EvalReport]:
    """Run each variant on the same seeded corpus."""
    variants = list(variants)
    if not variants:
        raise ValueError("no variants requested")
    corpus = corpus or build_sim_corpus(default_spec(cfg), seed=cfg.seed if seed is None else seed)
    index = PageIndex(corpus)
    bases: dict[BuildOptions, object] = {}
    out = {}
    for v in variants:
        options, gate_cfg, generic = variant_settings(v, cfg)
        if options not in bases:
            bases[options] = build_base(corpus.experiences, cfg, options=options, created_at="")
        out[v] = evaluate(corpus, bases[options], cfg, gate_cfg, generic, v, index)
    return out


def ablation_table(reports: dict[str, EvalReport]) -> str:
    head = f"{'variant':<18}{'rules':>6}{'QP@3':>8}{'hops':>7}{'nDCG@10':>9}{'EM':>7}{'proceed':>9}"
    lines = [head, "-" * len(head)]
    for v, r in reports.items():
        a = r.aggregate
        lines.append(
            f"{v:<18}{a['n_rules']:>6}{a['qp3']:>8.3f}{a['page_hops']:>7.2f}{a['ndcg10']:>9.3f}{a['em']:>7.3f}{a['proceed_rate']:>9.2f}"
        )
    return "\n".join(lines)


def report_digest(reports: dict[str, EvalReport]) -> str:
    blob = json.dumps({k: v.to_json() for k, v in reports.items()}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def mean(xs) -> float:
    return float(np.mean(xs)) if len(xs) else 0.0
