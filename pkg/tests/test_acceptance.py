"""Acceptance suite: one PASS/FAIL line per criterion, printed to the terminal."""

import math
import time

import numpy as np
import pytest

from oracles import infonce_numeric_grad, mmr_oracle, ndcg_oracle, topk_oracle

from expbase.canonicalize import SourceRef
from expbase.config import PipelineConfig
from expbase.evidence import EvidenceItem, mmr_select
from expbase.facets import UNIVERSAL_REGION, FacetIndicatorMap
from expbase.pipeline import build_base, replay_matches, rule_contents, streaming_update
from expbase.retrieval import FALLBACK, PROCEED, GateConfig, RuleIndex, gate_decision, mine_hard_negatives, topk_experiences
from expbase.simeval.bench import GENERIC, run_ablation
from expbase.simeval.corpus import SimCorpus
from expbase.simeval.metrics import ndcg_at_10
from expbase.store import save_base
from expbase.training import (
    BigramModel,
    ContrastiveBatch,
    PlanLossConfig,
    TrainingConfig,
    loss_plan,
    loss_ret,
    toy_separable_set,
    train_projection,
)

DIVERSIFICATION_SOURCES = {"Investopedia", "CFAI", "BlackRock", "Morningstar", "Corp Finance"}
WORDS = ["bond", "yield", "tax", "credit", "hedge", "fund", "rate", "fee", "asset", "risk",
         "ontario", "pension", "mortgage", "crypto", "custody", "dividend", "payout", "inflation"]


@pytest.fixture
def report(capsys):
    def emit(n: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[acceptance {n:>2}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail

    return emit


@pytest.fixture(scope="module")
def bigram():
    vocab = ["hedge", "ontario", "germany", "2023", "forward", "<unk>"]
    rng = np.random.default_rng(0)
    table = rng.random((len(vocab) + 1, len(vocab)))
    return BigramModel(vocab, table / table.sum(axis=1, keepdims=True))


def test_1_diversification_golden_path(report, diversification):
    t0 = time.perf_counter()
    base = build_base(diversification, created_at="")
    elapsed = time.perf_counter() - t0
    rules = list(base.rules.values())
    ok = len(rules) == 1
    if ok:
        r = rules[0]
        cites = {c.url_or_name for c in r.citations}
        ok = (cites <= DIVERSIFICATION_SOURCES and bool(cites)
              and r.facets.time.is_open and r.facets.region == UNIVERSAL_REGION)
    ok = ok and elapsed < 1.0
    report(1, ok, f"{len(rules)} rule(s), sentinel time/region, citations within the 5 sources, {elapsed:.3f}s (< 1s)")


def test_2_gate_arithmetic(report):
    a = gate_decision([0.20, 0.25, 0.25], 0.3)[1]
    b = gate_decision([0.5, 0.5, 0.5], 0.3)[1]
    report(2, a == FALLBACK and b == PROCEED, f"(0.20,0.25,0.25) -> {a}, (0.5,0.5,0.5) -> {b} at theta=0.3")


def test_3_contrastive_loss(report):
    t0 = time.perf_counter()
    q = np.array([1.0, 0.0, 0.0])
    p = np.array([1.0, 1.0, 0.0]) / math.sqrt(2)
    n = np.array([1.0, 0.0, 1.0]) / math.sqrt(2)
    loss, _ = loss_ret(ContrastiveBatch(q, p, n[None, :], 0.07), np.eye(3))
    ln2_err = abs(loss - math.log(2))
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        dim = int(rng.integers(3, 9))
        batch = ContrastiveBatch(rng.normal(size=dim), rng.normal(size=dim),
                                 rng.normal(size=(int(rng.integers(1, 6)), dim)), float(rng.uniform(0.2, 1.0)))
        P = np.eye(dim) + 0.3 * rng.normal(size=(dim, dim))
        _, grad = loss_ret(batch, P)
        num = infonce_numeric_grad(lambda M: loss_ret(batch, M)[0], P, 1e-5)
        worst = max(worst, float(np.linalg.norm(grad - num) / max(np.linalg.norm(num), 1e-12)))
    elapsed = time.perf_counter() - t0
    ok = ln2_err <= 1e-9 and worst <= 1e-4 and elapsed < 10.0
    report(3, ok, f"|loss - ln2| = {ln2_err:.2e} (<= 1e-9), worst grad rel err {worst:.2e} over 100 batches (<= 1e-4), {elapsed:.2f}s")


def test_4_plan_loss(report, bigram):
    toks = ["hedge", "ontario", "germany", "2023", "forward"]
    nll = -sum(math.log(bigram.prob(t, p)) for t, p in zip(toks, [None] + toks[:-1]))
    cfg = PlanLossConfig(alpha_up=0.5, beta_down=0.25)
    plain = loss_plan(toks, bigram, FacetIndicatorMap.empty(), cfg)
    phi = FacetIndicatorMap({"region": ("ontario",)}, {"region": ("ontario",)})
    one = ["hedge", "ontario"]
    contrib = -math.log(bigram.prob("ontario", "hedge"))
    scaled = loss_plan(one, bigram, phi, cfg) - (-math.log(bigram.prob("hedge", None)))
    ok = abs(plain - nll) <= 1e-12 and abs(scaled - (1 + cfg.alpha_up) * contrib) <= 1e-12
    report(4, ok, f"empty-facet loss - NLL = {plain - nll:.1e}; facet token weight {scaled / contrib:.12f} (expect {1 + cfg.alpha_up})")


def _item(text, score, source):
    return EvidenceItem(SourceRef(source), text, 0.0, 0.0, score)


def test_5_mmr_and_topk_oracles(report):
    t0 = time.perf_counter()
    mismatches = 0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 21))
        pool = [_item(" ".join(rng.choice(WORDS, size=int(rng.integers(2, 7)))), float(rng.random()), f"s{i}") for i in range(n)]
        lam, k = float(rng.random()), int(rng.integers(1, n + 1))
        mismatches += mmr_select(pool, lam, k) != mmr_oracle(pool, lam, k)
        m = int(rng.integers(1, 101))
        rules = {f"r{i:03d}": " ".join(rng.choice(WORDS, size=int(rng.integers(2, 9)))) for i in range(m)}
        query = " ".join(rng.choice(WORDS, size=3))
        k = int(rng.integers(1, m + 1))
        got = topk_experiences(query, rules, GateConfig(k=k))
        want = topk_oracle(query, rules, k)
        mismatches += [r for r, _ in got.items] != [r for r, _ in want]
        mismatches += not np.allclose([s for _, s in got.items], [s for _, s in want], atol=1e-12)
    elapsed = time.perf_counter() - t0
    report(5, mismatches == 0 and elapsed < 30.0, f"{mismatches} oracle mismatches over 50 seeds (pools <= 20, bases <= 100), {elapsed:.2f}s")


def test_6_ndcg(report):
    v = ndcg_at_10(["a", "b", "c"], {"a": 1.0, "c": 1.0})
    rng = np.random.default_rng(6)
    violations = 0
    for _ in range(1000):
        n = int(rng.integers(2, 15))
        rel = (rng.random(n) < 0.4).astype(float)
        order = [f"p{i}" for i in rng.permutation(n)]
        relevance = {f"p{i}": rel[i] for i in range(n) if rel[i] > 0}
        base = ndcg_at_10(order, relevance)
        violations += abs(base - ndcg_oracle([relevance.get(p, 0.0) for p in order])) > 1e-12
        # promote a relevant item one position above a non-relevant neighbour
        swaps = [i for i in range(1, n) if order[i] in relevance and order[i - 1] not in relevance]
        if swaps:
            i = swaps[int(rng.integers(len(swaps)))]
            promoted = order[: i - 1] + [order[i], order[i - 1]] + order[i + 1:]
            violations += ndcg_at_10(promoted, relevance) < base - 1e-15
    ok = abs(v - 0.91972) <= 1e-5 and violations == 0
    report(6, ok, f"nDCG(1,0,1) = {v:.5f} (0.91972 +/- 1e-5), {violations} monotonicity violations in 1000 permutations")


def test_7_ablation_direction(report):
    t0 = time.perf_counter()
    cfg = PipelineConfig()
    reports = run_ablation(["full", "k1", "no_merge", GENERIC], cfg)
    elapsed = time.perf_counter() - t0
    a = {v: r.aggregate for v, r in reports.items()}
    n_q = a["full"]["n_questions"]
    reduction = 1.0 - a["full"]["page_hops"] / a[GENERIC]["page_hops"]
    ok = (n_q == 200 and a["full"]["qp3"] > a["k1"]["qp3"] and a["full"]["qp3"] > a["no_merge"]["qp3"]
          and reduction >= 0.15 and elapsed < 300.0)
    report(7, ok, (f"{n_q} questions; QP@3 full {a['full']['qp3']:.3f} > k1 {a['k1']['qp3']:.3f}, "
                   f"> no_merge {a['no_merge']['qp3']:.3f}; hops {a['full']['page_hops']:.2f} vs generic "
                   f"{a[GENERIC]['page_hops']:.2f} ({reduction:.0%} fewer, >= 15%); {elapsed:.1f}s"))


def test_8_training_efficacy(report):
    t0 = time.perf_counter()
    rules, train, test = toy_separable_set(0)
    res = train_projection(train, rules, TrainingConfig(epochs=200, seed=0))
    hits = sum(topk_experiences(q, rules, GateConfig(k=1), res.projection).rule_ids[0] == pos for q, pos in test)
    elapsed = time.perf_counter() - t0
    halved = next((i + 1 for i, l in enumerate(res.losses) if l <= 0.5 * res.losses[0]), None)
    ok = halved is not None and hits / len(test) >= 0.9 and elapsed < 60.0
    report(8, ok, (f"loss {res.losses[0]:.4f} -> {res.losses[-1]:.4f}, halved by epoch {halved} (<= 200); "
                   f"held-out top-1 {hits}/{len(test)} (>= 90%); {elapsed:.1f}s"))


def test_9_determinism_and_versioning(report, diversification, ten_topics, stream_new, fixtures_dir, tmp_path):
    base = build_base(ten_topics[:12], created_at="t1")
    save_base(base, tmp_path)
    for i, chunk in enumerate((ten_topics[12:], stream_new[:1], stream_new[1:])):
        base = streaming_update(base, chunk, created_at=f"t{i + 2}")
        save_base(base, tmp_path)
    matches = replay_matches(tmp_path)
    replay_ok = all(ok for _, ok in matches) and len(matches) == 4

    sim = SimCorpus.load(fixtures_dir / "sim50").experiences
    datasets = {"diversification": diversification, "ten_topics": ten_topics + stream_new, "sim50": sim}
    disagreements = []
    for name, data in datasets.items():
        for split in (len(data) // 3, len(data) // 2, len(data) - 1):
            first, second = data[:split], data[split:]
            streamed = streaming_update(build_base(first, created_at=""), second, created_at="")
            if rule_contents(streamed) != rule_contents(build_base(data, created_at="")):
                disagreements.append(f"{name}@{split}")
        inter = streaming_update(build_base(data[::2], created_at=""), data[1::2], created_at="")
        if rule_contents(inter) != rule_contents(build_base(data[::2] + data[1::2], created_at="")):
            disagreements.append(f"{name} interleaved")
    ok = replay_ok and not disagreements
    report(9, ok, f"replay byte-identical on {len(matches)} versions: {replay_ok}; streaming vs full disagreements: {disagreements or 'none'}")


def test_10_hard_negative_contract(report, diversification, ten_topics, stream_new, fixtures_dir):
    sim = SimCorpus.load(fixtures_dir / "sim50").experiences
    checked = violations = 0
    for data in (diversification, ten_topics + stream_new, sim):
        base = build_base(data, created_at="")
        idx = RuleIndex.from_base(base)
        for t in data:
            scores = idx.scores(t.question)
            for pos in base.rules:
                got = mine_hard_negatives(t.question, [pos], base, pool_size=64, margin=0.05, n_neg=8)
                for rid in got.rule_ids:
                    checked += 1
                    violations += rid == pos or abs(scores[rid] - scores[pos]) < 0.05
    report(10, violations == 0 and checked > 0, f"{checked} mined negatives checked exhaustively, {violations} violations")
