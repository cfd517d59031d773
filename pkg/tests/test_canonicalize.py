import itertools
import json

import numpy as np
import pytest

from expbase.canonicalize import (
    DatasetError,
    QATuple,
    SourceRef,
    canonicalize_all,
    canonicalize_question,
    load_dataset,
    mine_paraphrase_groups,
    save_dataset,
)
from expbase.errors import EmptyText
from expbase.textmodel import cosine, embed_text


def test_diversification_question_is_identity_after_normalization():
    q = "When is diversification most effective in portfolio risk management?"
    assert canonicalize_question(q) == "when is diversification most effective in portfolio risk management"


@pytest.mark.parametrize(
    "q, expected",
    [
        ("What changed in 2023?", "what changed in <YEAR>"),
        ("Is a 15% cap binding?", "is a <NUM> cap binding"),
        ('Does "Basel III" apply?', "does <ENT> apply"),
    ],
)
def test_delexicalization_placeholders(q, expected):
    assert canonicalize_question(q) == expected


def test_paraphrase_intents_are_close():
    a = canonicalize_question("Does correlation affect diversification?")
    b = canonicalize_question("Does asset correlation affect diversification benefits?")
    assert cosine(embed_text(a), embed_text(b)) >= 0.6


def test_canonicalize_idempotent():
    rng = np.random.default_rng(0)
    words = ["Tax", "2021", "rate,", "'Ontario'", "q3", "15.5%", "what?", "a_1", "(note)", "IS"]
    for _ in range(300):
        q = " ".join(rng.choice(words, size=int(rng.integers(1, 8))))
        once = canonicalize_question(q)
        assert canonicalize_question(once) == once


def test_empty_question_rejected():
    with pytest.raises(EmptyText):
        canonicalize_question("  ")


def _tuples(questions):
    return canonicalize_all(QATuple(f"t{i}", q) for i, q in enumerate(questions))


def test_threshold_one_keeps_distinct_texts_apart():
    ts = _tuples(["alpha beta", "gamma delta", "epsilon zeta"])
    assert mine_paraphrase_groups(ts, 1.0) == [["t0"], ["t1"], ["t2"]]


def test_identical_questions_share_a_group():
    ts = _tuples(["same question here", "same question here", "other thing"])
    for th in (0.1, 0.5, 1.0):
        groups = mine_paraphrase_groups(ts, th)
        assert ["t0", "t1"] in groups


def test_diversification_grouping_matches_all_pairs_oracle(diversification):
    ts = canonicalize_all(diversification)
    vecs = {t.id: embed_text(t.canonical_intent) for t in ts}
    # connected components of the thresholded graph, by brute force
    comp = {t.id: {t.id} for t in ts}
    for a, b in itertools.combinations(sorted(vecs), 2):
        if float(vecs[a] @ vecs[b]) >= 0.35:
            merged = comp[a] | comp[b]
            for m in merged:
                comp[m] = merged
    oracle = sorted({tuple(sorted(c)) for c in comp.values()})
    got = mine_paraphrase_groups(ts, 0.35)
    assert sorted(tuple(g) for g in got) == oracle


def test_groups_partition_input():
    rng = np.random.default_rng(2)
    words = ["tax", "rate", "fund", "bond", "yield", "risk", "asset", "hedge"]
    qs = [" ".join(rng.choice(words, size=4)) for _ in range(25)]
    ts = _tuples(qs)
    groups = mine_paraphrase_groups(ts, 0.5)
    flat = [i for g in groups for i in g]
    assert sorted(flat) == sorted(t.id for t in ts)


def test_dataset_roundtrip(tmp_path):
    ts = canonicalize_all([
        QATuple("a", "Q one?", "A.", "because", (SourceRef("CFAI", "quote", 1),)),
        QATuple("b", "Q two?"),
    ])
    path = tmp_path / "d.jsonl"
    save_dataset(ts, path)
    assert load_dataset(path) == ts


def test_dataset_rejects_duplicates_and_garbage(tmp_path):
    p = tmp_path / "dup.jsonl"
    p.write_text(json.dumps({"id": "x", "question": "q"}) + "\n" + json.dumps({"id": "x", "question": "r"}) + "\n")
    with pytest.raises(DatasetError):
        load_dataset(p)
    p.write_text('{"question": "no id"}\n')
    with pytest.raises(DatasetError):
        load_dataset(p)
