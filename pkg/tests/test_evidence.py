import itertools

import numpy as np
import pytest
from oracles import mmr_oracle, okapi

from expbase.canonicalize import QATuple, SourceRef, canonicalize_all
from expbase.clustering import Cluster, cluster_qa
from expbase.errors import EmptyCluster
from expbase.evidence import EvidenceItem, aggregate_evidence, dedup_quotes, mmr_select
from expbase.textmodel import embed_text, shingle_jaccard, tokenize

DIVERSIFICATION_SOURCES = {"Investopedia", "CFAI", "BlackRock", "Morningstar", "Corp Finance"}


def item(text, score, source="s", kind="citation"):
    return EvidenceItem(SourceRef(source), text, 0.0, 0.0, score, kind)


def cluster_of(tuples):
    ts = canonicalize_all(tuples)
    ids = sorted(t.id for t in ts)
    cent = sum(embed_text(t.intent) for t in ts)
    return Cluster("c-test", tuple((i, 1.0) for i in ids), ids[0], cent / np.linalg.norm(cent)), {t.id: t for t in ts}


def test_singleton_pool_scores_one():
    cl, lk = cluster_of([QATuple("x", "What is a hedge?", citations=(SourceRef("Src", "A hedge offsets risk."),))])
    out = aggregate_evidence(cl, lk)
    assert len(out) == 1 and out[0].fused_score == 1.0 and out[0].source_name == "Src"


def test_diversification_pool_has_all_five_sources(diversification):
    res = cluster_qa(canonicalize_all(diversification))
    assert len(res.clusters) == 1
    lk = {t.id: t for t in canonicalize_all(diversification)}
    names = {e.source_name for e in aggregate_evidence(res.clusters[0], lk)}
    assert DIVERSIFICATION_SOURCES <= names


def test_six_item_fusion_matches_hand_oracle():
    tuples = [
        QATuple("t1", "How do tax credits work in Ontario?", citations=(
            SourceRef("gov", "Ontario tax credits reduce the tax you owe."),
            SourceRef("blog", "Credits in Ontario are claimed on the return."),
        )),
        QATuple("t2", "Who qualifies for Ontario tax credits?", citations=(
            SourceRef("cra", "Residents of Ontario qualify for provincial credits."),
            SourceRef("news", "Bond markets rallied on Friday."),
            SourceRef("faq", "Tax credits in Ontario depend on income."),
            SourceRef("wiki", "A tax credit lowers tax payable."),
        )),
    ]
    cl, lk = cluster_of(tuples)
    got = aggregate_evidence(cl, lk, alpha=0.5, top_n=20)
    texts = [r.quote for t in tuples for r in t.citations]
    docs = {str(i): tokenize(x) for i, x in enumerate(texts)}
    query = tokenize(lk[cl.medoid_id].question)
    dense = [float(embed_text(x) @ cl.centroid) for x in texts]
    lex = [okapi(query, str(i), docs) for i in range(len(texts))]

    def mm(v):
        lo, hi = min(v), max(v)
        return [(x - lo) / (hi - lo) for x in v]

    fused = [0.5 * a + 0.5 * b for a, b in zip(mm(dense), mm(lex))]
    order = sorted(range(6), key=lambda i: -fused[i])
    assert [e.text for e in got] == [texts[i] for i in order]
    for e, i in zip(got, order):
        assert e.fused_score == pytest.approx(fused[i], abs=1e-12)


def test_aggregate_is_deterministic(diversification):
    lk = {t.id: t for t in canonicalize_all(diversification)}
    cl = cluster_qa(list(lk.values())).clusters[0]
    assert aggregate_evidence(cl, lk) == aggregate_evidence(cl, lk)


def test_empty_cluster_rejected():
    with pytest.raises(EmptyCluster):
        aggregate_evidence(Cluster("c0", (), "x", np.zeros(4)), {})


# ------------------------------------------------------------ MMR


POOL = [
    item("Diversification works best with uncorrelated assets.", 0.95, "a"),
    item("Diversification works best with uncorrelated assets!", 0.94, "b"),
    item("Rebalancing quarterly keeps risk targets on track.", 0.80, "c"),
    item("Bond duration measures rate sensitivity.", 0.70, "d"),
    item("Currency hedges reduce foreign exchange exposure.", 0.60, "e"),
    item("Low correlation lowers portfolio volatility.", 0.55, "f"),
    item("Index funds keep fees low.", 0.40, "g"),
    item("Tax-loss harvesting offsets gains.", 0.30, "h"),
]


def test_mmr_n1_is_top_item():
    assert mmr_select(POOL, 0.7, 1) == [POOL[0]]


def test_mmr_lambda_one_is_relevance_order():
    assert mmr_select(POOL, 1.0, 8) == sorted(POOL, key=lambda e: -e.fused_score)


def test_mmr_displaces_near_duplicate():
    got = mmr_select(POOL, 0.7, 3)
    assert got == mmr_oracle(POOL, 0.7, 3)
    assert POOL[0] in got and POOL[1] not in got


def test_mmr_n_larger_than_pool():
    assert len(mmr_select(POOL[:3], 0.5, 10)) == 3


@pytest.mark.parametrize("seed", range(10))
def test_mmr_matches_oracle_random_pools(seed):
    rng = np.random.default_rng(seed)
    words = ["risk", "bond", "tax", "yield", "hedge", "fund", "rate", "fee", "credit", "asset"]
    n = int(rng.integers(1, 21))
    pool = [item(" ".join(rng.choice(words, size=4)), float(rng.random()), f"s{i}") for i in range(n)]
    lam = float(rng.random())
    k = int(rng.integers(1, 8))
    assert mmr_select(pool, lam, k) == mmr_oracle(pool, lam, k)


# ------------------------------------------------------------ dedup


def test_dedup_identical_quotes():
    out = dedup_quotes([item("same quote text", 0.9, "a"), item("same quote text", 0.8, "b")])
    assert [e.source_name for e in out] == ["a"]


def test_dedup_threshold_one_distinct_is_identity():
    pool = [item(f"quote number {w}", 1.0 - i / 10, f"s{i}") for i, w in enumerate(["one", "two", "three"])]
    assert dedup_quotes(pool, 1.0, 2) == pool


def test_dedup_source_cap_drops_lowest():
    pool = [item("alpha statement", 0.5, "x"), item("beta statement", 0.9, "x"), item("gamma remark", 0.7, "x")]
    out = dedup_quotes(pool, 0.8, 2)
    assert [e.fused_score for e in out] == [0.9, 0.7]


def test_dedup_output_pairwise_below_threshold():
    rng = np.random.default_rng(0)
    words = ["risk", "bond", "tax", "yield", "hedge"]
    pool = [item(" ".join(rng.choice(words, size=3)), float(rng.random()), f"s{i % 4}") for i in range(30)]
    out = dedup_quotes(pool, 0.6, 3)
    for a, b in itertools.combinations(out, 2):
        assert shingle_jaccard(a.text, b.text) < 0.6
    counts = {}
    for e in out:
        counts[e.source_name] = counts.get(e.source_name, 0) + 1
    assert max(counts.values()) <= 3
