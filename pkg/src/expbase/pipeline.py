"""Offline construction of the experience base, streaming updates, and replay."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .canonicalize import QATuple, canonicalize_all
from .clustering import Cluster, MultiViewWeights, cluster_qa, merge_topics, warm_start_refresh
from .config import PipelineConfig
from .distill import ExperienceRule, ExtractiveSummarizer, Summarizer, assemble_rule, rule_id_for
from .errors import ConfigDrift, EmptyCorpus, NoExperiences
from .evidence import aggregate_evidence, dedup_quotes, mmr_select
from .facets import FacetTables, FacetVocab, facetize, induce_facet_vocab, term_counts
from .resources import load_table
from .store import ChangeSet, ExperienceBaseVersion, commit_version, empty_base, load_history, rules_jsonl


@dataclass(frozen=True)
class BuildOptions:
    """Switches used by ablations; defaults give the full pipeline."""

    merge: bool = True
    sentence_embed: bool = True


def _weights(cfg: PipelineConfig) -> MultiViewWeights:
    return MultiViewWeights(*cfg.clustering.view_weights)


def cluster_vocab(texts: Sequence[str], z_cut: float, tables: FacetTables) -> FacetVocab | None:
    """Salient terms of one cluster against the background table."""
    try:
        return induce_facet_vocab(term_counts(texts), load_table("background_counts.json"), z_cut, tables)
    except EmptyCorpus:
        return None


def distill_cluster(
    cluster: Cluster,
    lookup: Mapping[str, QATuple],
    cfg: PipelineConfig,
    version: int,
    rule_id: str | None = None,
    tables: FacetTables | None = None,
    summarizer: Summarizer | None = None,
    options: BuildOptions = BuildOptions(),
) -> ExperienceRule:
    """Evidence -> dedup -> MMR -> summary -> facets -> rule, for one cluster."""
    tables = tables or FacetTables.default()
    summarizer = summarizer or ExtractiveSummarizer()
    e = cfg.evidence
    pool = aggregate_evidence(cluster, lookup, e.alpha, e.top_n)
    selected = mmr_select(dedup_quotes(pool, e.jaccard_threshold, e.per_source_cap), e.mmr_lambda, e.mmr_n)
    hard = [lookup[m] for m in cluster.hard_ids]
    draft = summarizer(selected, [t.answer for t in hard], [t.rationale for t in hard if t.rationale])
    member_texts = [t.question for t in hard] + [t.answer for t in hard if t.answer]
    # facets come from the cluster's own members; soft members only contribute evidence
    texts = [draft.core_guidance, *draft.conditions, *member_texts]
    facets = facetize(texts, cluster_vocab(texts, cfg.facets.z_cut, tables), tables)
    retrieval_text = "" if options.sentence_embed else " ".join(member_texts)
    return assemble_rule(draft, cluster, selected, facets, lookup, version, rule_id, retrieval_text)


def cluster_all(tuples: Sequence[QATuple], cfg: PipelineConfig, options: BuildOptions = BuildOptions()):
    c = cfg.clustering
    w = _weights(cfg)
    res = cluster_qa(tuples, w, c.min_cluster_size, c.soft_threshold)
    lookup = {t.id: t for t in tuples}
    clusters = merge_topics(res.clusters, c.merge_threshold, lookup, w) if options.merge else res.clusters
    covered = {m for cl in clusters for m in cl.member_ids}
    return clusters, [n for n in res.noise if n not in covered]


def build_base(
    tuples: Sequence[QATuple],
    cfg: PipelineConfig = PipelineConfig(),
    parent: ExperienceBaseVersion | None = None,
    options: BuildOptions = BuildOptions(),
    tables: FacetTables | None = None,
    summarizer: Summarizer | None = None,
    created_at: str | None = None,
) -> ExperienceBaseVersion:
    """Full build from raw tuples into the version after ``parent``."""
    if not tuples:
        raise NoExperiences("dataset is empty")
    parent = parent or empty_base(cfg.digest)
    canon = canonicalize_all(tuples)
    lookup = {t.id: t for t in canon}
    clusters, _ = cluster_all(canon, cfg, options)
    v = parent.version + 1
    rules = [distill_cluster(c, lookup, cfg, v, None, tables, summarizer, options) for c in clusters]
    known = parent.known_ids()
    changes = ChangeSet(
        adds=tuple(r for r in rules if r.rule_id not in parent.rules and r.rule_id not in known),
        updates=tuple(r for r in rules if r.rule_id in parent.rules),
        removes=tuple(sorted(rid for rid in parent.rules if rid not in {r.rule_id for r in rules})),
    )
    return commit_version(parent, changes, clusters, lookup, cfg.digest, created_at)


def streaming_update(
    base: ExperienceBaseVersion,
    new_tuples: Sequence[QATuple],
    cfg: PipelineConfig = PipelineConfig(),
    options: BuildOptions = BuildOptions(),
    tables: FacetTables | None = None,
    summarizer: Summarizer | None = None,
    created_at: str | None = None,
) -> ExperienceBaseVersion:
    """Warm-start refresh; only clusters that changed are re-distilled.

    Earlier noise tuples are offered to the refresh again so they can form a
    cluster together with the new arrivals.
    """
    if base.config_digest and base.config_digest != cfg.digest:
        raise ConfigDrift("pipeline config changed since this base was built; run a full rebuild")
    new = canonicalize_all(t for t in new_tuples if t.id not in base.tuples)
    if not new:
        return commit_version(base, ChangeSet(), created_at=created_at)
    lookup = dict(base.tuples)
    lookup.update({t.id: t for t in new})
    covered = {m for c in base.clusters for m in c.member_ids}
    old_noise = [lookup[t] for t in sorted(base.tuples) if t not in covered]
    c = cfg.clustering
    # without topic merging only identical centroids can merge
    merge_threshold = c.merge_threshold if options.merge else 1.0
    refresh = warm_start_refresh(
        list(base.clusters), new + old_noise, lookup, _weights(cfg), c.min_cluster_size, c.soft_threshold, merge_threshold
    )
    v = base.version + 1
    rule_of = {r.cluster_id: rid for rid, r in base.rules.items()}
    known = base.known_ids()
    adds, updates, merges = [], [], []
    by_id = {cl.cluster_id: cl for cl in refresh.clusters}
    for cid in refresh.changed:
        cl = by_id[cid]
        rid = rule_of.get(cid)
        if rid is not None:
            updates.append(distill_cluster(cl, lookup, cfg, v, rid, tables, summarizer, options))
        else:
            rid = rule_id_for(cid)
            n = 1
            while rid in known:
                rid = f"{rule_id_for(cid)}-{n}"
                n += 1
            adds.append(distill_cluster(cl, lookup, cfg, v, rid, tables, summarizer, options))
    for removed in refresh.removed:
        gone = rule_of.get(removed)
        if gone is None:
            continue
        survivor = next((cl for cl in refresh.clusters if removed in cl.aliases), None)
        if survivor is not None and survivor.cluster_id in rule_of:
            merges.append((rule_of[survivor.cluster_id], gone))
    changes = ChangeSet(tuple(adds), tuple(updates), tuple(merges))
    return commit_version(base, changes, refresh.clusters, lookup, created_at=created_at)


def replay(path: str | Path, cfg: PipelineConfig = PipelineConfig(), options: BuildOptions = BuildOptions()) -> list[ExperienceBaseVersion]:
    """Rebuild every stored version from its tuples, in order.

    Version 1 is a full build; each later version is a streaming update with
    the tuples that first appear in it.
    """
    history = load_history(path)
    out: list[ExperienceBaseVersion] = []
    prev: ExperienceBaseVersion | None = None
    for stored in history:
        if prev is None:
            base = build_base(list(stored.tuples.values()), cfg, options=options, created_at=stored.created_at)
        else:
            fresh = [t for tid, t in sorted(stored.tuples.items()) if tid not in prev.tuples]
            base = streaming_update(prev, fresh, cfg, options, created_at=stored.created_at)
        out.append(base)
        prev = base
    return out


def replay_matches(path: str | Path, cfg: PipelineConfig = PipelineConfig()) -> list[tuple[int, bool]]:
    """Per version, whether the replayed rules file equals the stored bytes."""
    history = load_history(path)
    rebuilt = replay(path, cfg)
    return [(h.version, rules_jsonl(h) == rules_jsonl(r)) for h, r in zip(history, rebuilt)]


def rule_contents(base: ExperienceBaseVersion) -> list[str]:
    """Identity-free rule payloads, sorted, for comparing two builds."""
    return sorted(json.dumps(r.content(), sort_keys=True) for r in base.rules.values())
