import numpy as np
import pytest

from oracles import topk_oracle

from expbase.retrieval import (
    FALLBACK,
    PROCEED,
    GateConfig,
    RetrievedExperiences,
    RuleIndex,
    gate,
    gate_decision,
    mine_hard_negatives,
    select_hard_negatives,
    topk_experiences,
)
from expbase.store import empty_base

WORDS = ["bond", "yield", "tax", "credit", "hedge", "fund", "rate", "fee", "asset", "risk",
         "ontario", "pension", "mortgage", "crypto", "custody", "dividend", "payout", "inflation"]


def random_rules(rng, n):
    return {f"r{i:03d}": " ".join(rng.choice(WORDS, size=int(rng.integers(3, 9)))) for i in range(n)}


def test_gate_examples():
    assert gate_decision([0.20, 0.25, 0.25], 0.3)[1] == FALLBACK
    assert gate_decision([0.20, 0.25, 0.25], 0.3)[0] == pytest.approx(0.233333333, abs=1e-8)
    assert gate_decision([0.5, 0.5, 0.5], 0.3) == (0.5, PROCEED)
    assert gate_decision([], 0.3) == (0.0, FALLBACK)


def test_gate_is_pure_function_of_scores():
    rng = np.random.default_rng(0)
    for _ in range(2000):
        scores = sorted(rng.uniform(-1, 1, size=int(rng.integers(0, 8))).tolist(), reverse=True)
        theta = float(rng.random())
        r = gate(RetrievedExperiences(tuple((f"r{i}", s) for i, s in enumerate(scores)), 5), GateConfig(5, theta))
        expected = FALLBACK if not scores or np.mean(scores) < theta else PROCEED
        assert r.gate_decision == expected
        assert r.gate_confidence == (float(np.mean(scores)) if scores else 0.0)


def test_gate_config_validation():
    with pytest.raises(ValueError):
        GateConfig(0, 0.3)
    with pytest.raises(ValueError):
        GateConfig(5, 1.1)


def test_empty_base_falls_back():
    got = topk_experiences("anything", empty_base())
    assert got.items == () and got.gate_decision == FALLBACK and got.gate_confidence == 0.0


def test_k_at_least_base_returns_all(ten_base):
    got = topk_experiences("ontario currency hedge", ten_base, GateConfig(k=50))
    assert len(got.items) == len(ten_base.rules)
    assert got.scores == sorted(got.scores, reverse=True)


def test_k5_prefix_consistent_with_k1(ten_base, ten_topics):
    for t in ten_topics:
        k5 = topk_experiences(t.question, ten_base, GateConfig(k=5))
        k1 = topk_experiences(t.question, ten_base, GateConfig(k=1))
        assert k5.items[:1] == k1.items
        assert len(k5.items) == 5


def test_ten_rule_base_matches_oracle():
    rules = random_rules(np.random.default_rng(7), 10)
    got = topk_experiences("tax credit on dividend payout", rules, GateConfig(k=10))
    want = topk_oracle("tax credit on dividend payout", rules, 10)
    assert [r for r, _ in got.items] == [r for r, _ in want]
    assert np.allclose([s for _, s in got.items], [s for _, s in want], atol=1e-12)


def test_ties_broken_by_rule_id():
    rules = {"rb": "bond yield", "ra": "bond yield", "rc": "pension fee"}
    got = topk_experiences("bond yield", rules, GateConfig(k=3))
    assert got.rule_ids[:2] == ["ra", "rb"]


def test_identity_projection_equals_none(ten_base):
    eye = np.eye(256)
    a = topk_experiences("bond duration 2022", ten_base, GateConfig(k=5))
    b = topk_experiences("bond duration 2022", ten_base, GateConfig(k=5), eye)
    assert a.rule_ids == b.rule_ids
    assert np.allclose(a.scores, b.scores, atol=1e-12)


# ------------------------------------------------------------ hard negatives


def test_margin_band_excludes_close_candidate():
    scores = {"pos": 0.80, "near": 0.77, "edge": 0.75, "far": 0.60, "low": 0.10}
    got = select_hard_negatives(scores, ["pos"], pool_size=64, margin=0.05, n_neg=3)
    assert "near" not in got.rule_ids  # 0.80 - 0.03
    assert "pos" not in got.rule_ids
    assert got.rule_ids == ("edge", "far", "low")
    assert not got.insufficient


def test_small_base_flags_insufficient():
    scores = {"pos": 0.9, "a": 0.5, "b": 0.4}
    got = select_hard_negatives(scores, ["pos"], pool_size=8, margin=0.05, n_neg=8)
    assert got.rule_ids == ("a", "b") and got.insufficient


def test_pool_limits_candidates():
    scores = {f"r{i}": 1.0 - i / 100 for i in range(20)}
    got = select_hard_negatives(scores, ["r0"], pool_size=5, margin=0.0, n_neg=5)
    assert got.rule_ids == ("r1", "r2", "r3", "r4")


def test_mining_contract_exhaustive_on_fixture(ten_base, ten_topics):
    idx = RuleIndex.from_base(ten_base)
    for t in ten_topics:
        scores = idx.scores(t.question)
        for pos in ten_base.rules:
            got = mine_hard_negatives(t.question, [pos], ten_base, pool_size=64, margin=0.05, n_neg=4)
            assert pos not in got.rule_ids
            for rid in got.rule_ids:
                assert abs(scores[rid] - scores[pos]) >= 0.05


def test_mining_needs_positive():
    with pytest.raises(ValueError):
        select_hard_negatives({"a": 0.1}, [], n_neg=1)
