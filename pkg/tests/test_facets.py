import math
from datetime import date

import numpy as np
import pytest

from expbase.errors import EmptyCorpus, NoExperiences
from expbase.facets import (
    UNIVERSAL_REGION,
    FacetSet,
    FacetTables,
    TimeInterval,
    extract_mentions,
    facet_indicators,
    facetize,
    induce_facet_vocab,
    log_odds_z,
    normalize_facets,
    parse_time,
    term_counts,
)
from expbase.resources import load_table

FINANCE = [
    "The CFA Institute publishes ethics standards for analysts.",
    "Candidates register with the CFA Institute before the exam.",
    "CFA Institute research covers portfolio construction.",
    "Portfolio managers follow CFA Institute guidance on disclosure.",
]


def test_log_odds_toy_counts_match_formula():
    domain = {"term": 30, "other": 970}
    background = {"term": 5, "other": 9995}
    # prior = background counts, a0 = 10000
    delta = math.log(35 / (1000 + 10000 - 30 - 5)) - math.log(10 / (10000 + 10000 - 5 - 5))
    expected = delta / math.sqrt(1 / 35 + 1 / 10)
    assert log_odds_z(domain, background)["term"] == pytest.approx(expected, rel=1e-12)


def test_equal_relative_frequency_gives_zero():
    z = log_odds_z({"x": 10, "y": 90}, {"x": 100, "y": 900})
    assert abs(z["x"]) < 0.5
    vocab = induce_facet_vocab({"x": 10, "y": 90}, {"x": 100, "y": 900})
    assert "x" not in [t for terms in vocab.facets.values() for t, _ in terms]


def test_cfa_institute_retained_against_background():
    vocab = induce_facet_vocab(term_counts(FINANCE), load_table("background_counts.json"))
    kept = [t for terms in vocab.facets.values() for t, _ in terms]
    assert "cfa institute" in kept
    assert all(z >= 1.96 for terms in vocab.facets.values() for _, z in terms)
    assert all(t == t.lower() for t in kept)


def test_vocab_routes_terms_to_facets():
    dom = {"ontario": 40, "2023": 30, "banking": 25, "sec": 20, "widget": 30, "the": 10}
    bg = {"the": 5000, "cat": 4000, "ontario": 1, "widget": 1}
    vocab = induce_facet_vocab(dom, bg)
    assert "ontario" in vocab.terms("region")
    assert "2023" in vocab.terms("time")
    assert "widget" in vocab.terms("extras")


def test_z_ranking_preserved_under_scaling():
    dom = term_counts(FINANCE)
    bg = load_table("background_counts.json")
    z1 = log_odds_z(dom, bg)
    z10 = log_odds_z({k: 10 * v for k, v in dom.items()}, {k: 10 * v for k, v in bg.items()})
    cands = sorted(dom)
    assert sorted(cands, key=lambda t: (-z1[t], t))[:10] == sorted(cands, key=lambda t: (-z10[t], t))[:10]


def test_empty_corpora_rejected():
    with pytest.raises(EmptyCorpus):
        induce_facet_vocab({}, {"a": 1})
    with pytest.raises(EmptyCorpus):
        induce_facet_vocab({"a": 1}, {})


# ------------------------------------------------------------ normalization


def test_diversification_sentinels():
    fs = normalize_facets(["Ongoing principle", "Universal context"])
    assert fs.time == TimeInterval() and fs.time.is_open
    assert fs.region == UNIVERSAL_REGION
    assert facetize(["Diversification works when assets are uncorrelated."]) == FacetSet(TimeInterval(), UNIVERSAL_REGION)


def test_empty_mentions():
    assert normalize_facets([]) == FacetSet()


@pytest.mark.parametrize(
    "text, start, end",
    [
        ("Q2 2023", date(2023, 4, 1), date(2023, 6, 30)),
        ("2023 Q4", date(2023, 10, 1), date(2023, 12, 31)),
        ("2021", date(2021, 1, 1), date(2021, 12, 31)),
        ("2019-2021", date(2019, 1, 1), date(2021, 12, 31)),
        ("March 2024", date(2024, 3, 1), date(2024, 3, 31)),
        ("February 2024", date(2024, 2, 1), date(2024, 2, 29)),
    ],
)
def test_time_parsing(text, start, end):
    assert parse_time(text) == TimeInterval(start, end)


def test_region_and_policy_normalization():
    fs = normalize_facets(["Ontario", "SEC Rule 10b-5"])
    assert fs.region == "ontario"
    assert fs.policy is not None and ":" in fs.policy


def test_conflicts_keep_highest_z_and_record_alternatives():
    vocab = induce_facet_vocab({"ontario": 50, "alberta": 5, "x": 100}, {"x": 1000, "ontario": 1, "alberta": 1})
    fs = normalize_facets(["Alberta", "Ontario"], vocab)
    assert fs.region == "ontario"
    assert fs.extras_dict()["region_alternatives"] == ["alberta"]


def test_unresolved_mentions_go_to_extras():
    fs = normalize_facets(["Atlantis"])
    assert fs.extras_dict() == {"unresolved": ["Atlantis"]}


def test_normalize_idempotent_on_normalized_input():
    fs = normalize_facets(["Q2 2023", "Ontario", "SEC Rule 10b-5", "banking"])
    again = normalize_facets(fs.as_mentions())
    assert (again.time, again.region, again.policy, again.industry) == (fs.time, fs.region, fs.policy, fs.industry)


def test_extract_mentions_longest_match():
    t = FacetTables.default()
    assert extract_mentions(["Taxes in British Columbia changed in Q2 2023."], t) == ["British Columbia", "Q2 2023"]


def test_facetset_json_roundtrip():
    fs = normalize_facets(["Q2 2023", "Ontario", "Atlantis"]).with_sentinels()
    assert FacetSet.from_json(fs.to_json()) == fs


# ------------------------------------------------------------ indicators


class _Rule:
    def __init__(self, facets):
        self.facets = facets


def test_single_region_rule_keywords_from_alias_table():
    t = FacetTables.default()
    aliases = sorted({a for a, rid in t.gazetteer.items() if rid == "ontario"})
    phi = facet_indicators([_Rule(FacetSet(region="ontario"))])
    assert phi.active_facets == ["region"]
    assert set(phi.keywords["region"]) == set(aliases) == {"ontario", "on"}


def test_disjoint_facets_union_and_sentinels_ignored():
    a = _Rule(FacetSet(region="ontario"))
    b = _Rule(FacetSet(time=parse_time("2023")))
    c = _Rule(FacetSet(TimeInterval(), UNIVERSAL_REGION))
    phi = facet_indicators([a, b, c])
    assert phi.active_facets == ["time", "region"]
    assert "2023" in phi.keywords["time"]
    assert facet_indicators([c]).is_empty()
    assert all(phi.keywords[f] for f in phi.active_facets)


def test_indicators_need_experiences():
    with pytest.raises(NoExperiences):
        facet_indicators([])


def test_interval_invariant():
    with pytest.raises(ValueError):
        TimeInterval(date(2024, 1, 2), date(2024, 1, 1))
    rng = np.random.default_rng(0)
    for _ in range(50):
        y = int(rng.integers(1990, 2030))
        q = int(rng.integers(1, 5))
        iv = parse_time(f"Q{q} {y}")
        assert iv.start <= iv.end and iv.label == f"q{q} {y}"
