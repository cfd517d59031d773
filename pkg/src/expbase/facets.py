"""Facet vocabulary induction, facet normalization, and facet indicator maps.

Core facets are ``time``, ``region``, ``policy`` and ``industry`` (an L2 label
of a two-level taxonomy). Normalization tables live in ``expbase/data`` and can
be replaced by passing a custom :class:`FacetTables`.
"""

from __future__ import annotations

import calendar
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import EmptyCorpus, NoExperiences
from .resources import load_json_path, load_table
from .textmodel import tokenize

CORE_FACETS = ("time", "region", "policy", "industry")
UNIVERSAL_REGION = "universal"
ONGOING_LABEL = "ongoing"

_MONTHS = {m.lower(): i for i, m in enumerate(calendar.month_name) if m}
_YEAR = r"(?:19|20)\d{2}"
_QUARTER_RE = re.compile(rf"\b[Qq]([1-4])[\s\-/]*({_YEAR})\b|\b({_YEAR})[\s\-/]*[Qq]([1-4])\b")
_RANGE_RE = re.compile(rf"\b(?:between\s+)?({_YEAR})\s*(?:-|–|to|and|through)\s*({_YEAR})\b", re.IGNORECASE)
_ISO_INTERVAL_RE = re.compile(r"\b(\d{4}-\d{2}-\d{2})/(\d{4}-\d{2}-\d{2})\b")
_ISO_DATE_RE = re.compile(r"\b(\d{4})-(\d{2})-(\d{2})\b")
_MONTH_RE = re.compile(rf"\b({'|'.join(_MONTHS)})\s+({_YEAR})\b", re.IGNORECASE)
_YEAR_RE = re.compile(rf"\b({_YEAR})\b")
_ONGOING_RE = re.compile(r"\b(?:ongoing(?:\s+principle)?|open[- ]ended|\.\./\.\.)", re.IGNORECASE)
_NORMALIZED_POLICY_RE = re.compile(r"^([a-z0-9][a-z0-9\-]*):([a-z0-9][a-z0-9\-]*)$")


@dataclass(frozen=True)
class TimeInterval:
    start: date | None = None
    end: date | None = None

    def __post_init__(self):
        if self.start and self.end and self.start > self.end:
            raise ValueError(f"interval start {self.start} after end {self.end}")

    @property
    def is_open(self) -> bool:
        return self.start is None and self.end is None

    def iso(self) -> str:
        return f"{self.start.isoformat() if self.start else '..'}/{self.end.isoformat() if self.end else '..'}"

    @property
    def label(self) -> str:
        """Human label derived from the interval itself (year, quarter, month...)."""
        if self.is_open:
            return ONGOING_LABEL
        s, e = self.start, self.end
        if s and e and s.year == e.year:
            if (s.month, s.day, e.month, e.day) == (1, 1, 12, 31):
                return str(s.year)
            last = calendar.monthrange(e.year, e.month)[1]
            if s.day == 1 and e.day == last and (s.month - 1) % 3 == 0 and e.month == s.month + 2:
                return f"q{(s.month - 1) // 3 + 1} {s.year}"
            if s.day == 1 and e.day == last and s.month == e.month:
                return f"{calendar.month_name[s.month].lower()} {s.year}"
        if s and e and (s.month, s.day, e.month, e.day) == (1, 1, 12, 31):
            return f"{s.year}-{e.year}"
        return self.iso()

    def years(self) -> list[int]:
        if self.start is None or self.end is None:
            return []
        return list(range(self.start.year, self.end.year + 1))

    @classmethod
    def parse_iso(cls, text: str) -> "TimeInterval":
        a, b = text.split("/")
        return cls(None if a == ".." else date.fromisoformat(a), None if b == ".." else date.fromisoformat(b))


@dataclass(frozen=True)
class FacetSet:
    time: TimeInterval | None = None
    region: str | None = None
    policy: str | None = None
    industry: str | None = None
    extras: tuple[tuple[str, tuple[str, ...]], ...] = ()

    def get(self, facet: str):
        return getattr(self, facet)

    def extras_dict(self) -> dict[str, list[str]]:
        return {k: list(v) for k, v in self.extras}

    def active(self) -> dict[str, str]:
        """Core facets with a concrete (non-sentinel) value, as normalized strings."""
        out: dict[str, str] = {}
        if self.time is not None and not self.time.is_open:
            out["time"] = self.time.iso()
        if self.region and self.region != UNIVERSAL_REGION:
            out["region"] = self.region
        if self.policy:
            out["policy"] = self.policy
        if self.industry:
            out["industry"] = self.industry
        return out

    def with_sentinels(self) -> "FacetSet":
        return FacetSet(
            self.time if self.time is not None else TimeInterval(),
            self.region or UNIVERSAL_REGION,
            self.policy,
            self.industry,
            self.extras,
        )

    def as_mentions(self) -> list[str]:
        out = []
        if self.time is not None:
            out.append(self.time.iso())
        for name in ("region", "policy", "industry"):
            if self.get(name):
                out.append(self.get(name))
        return out

    def to_json(self) -> dict:
        return {
            "time": self.time.iso() if self.time is not None else None,
            "region": self.region,
            "policy": self.policy,
            "industry": self.industry,
            "extras": {k: list(v) for k, v in self.extras},
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "FacetSet":
        t = obj.get("time")
        extras = tuple(sorted((k, tuple(v)) for k, v in (obj.get("extras") or {}).items()))
        return cls(TimeInterval.parse_iso(t) if t else None, obj.get("region"), obj.get("policy"), obj.get("industry"), extras)


@dataclass(frozen=True)
class PolicyPattern:
    name: str
    regex: re.Pattern
    issuer: str | None
    prefix: str | None


_DEFAULT_TABLES: "FacetTables | None" = None


@dataclass
class FacetTables:
    """Gazetteer (alias -> region id), two-level industry taxonomy, policy regexes."""

    gazetteer: dict[str, str]
    taxonomy: dict[str, dict[str, list[str]]]
    policy_patterns: list[PolicyPattern]
    _industry_alias: dict[str, str] = field(init=False, repr=False)
    _region_aliases: dict[str, list[str]] = field(init=False, repr=False)

    def __post_init__(self):
        self.gazetteer = {k.lower(): v for k, v in self.gazetteer.items()}
        self._industry_alias = {}
        for _l1, children in sorted(self.taxonomy.items()):
            for l2, aliases in sorted(children.items()):
                self._industry_alias[l2.lower()] = l2
                for a in aliases:
                    self._industry_alias[a.lower()] = l2
        self._region_aliases = {}
        for alias, cid in sorted(self.gazetteer.items()):
            self._region_aliases.setdefault(cid, []).append(alias)

    @classmethod
    def default(cls) -> "FacetTables":
        global _DEFAULT_TABLES
        if _DEFAULT_TABLES is None:
            _DEFAULT_TABLES = cls.from_raw(
                load_table("gazetteer.json"), load_table("industry_taxonomy.json"), load_table("policy_patterns.json")
            )
        return _DEFAULT_TABLES

    @classmethod
    def from_files(cls, gazetteer: str | Path, taxonomy: str | Path, policies: str | Path) -> "FacetTables":
        return cls.from_raw(load_json_path(gazetteer), load_json_path(taxonomy), load_json_path(policies))

    @classmethod
    def from_raw(cls, gazetteer: Mapping, taxonomy: Mapping, policies: Sequence[Mapping]) -> "FacetTables":
        pats = [PolicyPattern(p["name"], re.compile(p["pattern"]), p.get("issuer"), p.get("prefix")) for p in policies]
        return cls(dict(gazetteer), {k: dict(v) for k, v in taxonomy.items()}, pats)

    def region_aliases(self, region_id: str) -> list[str]:
        return self._region_aliases.get(region_id, [region_id])

    def industry_aliases(self, label: str) -> list[str]:
        return sorted({a for a, l2 in self._industry_alias.items() if l2 == label})

    def resolve_region(self, text: str) -> str | None:
        return self.gazetteer.get(" ".join(tokenize(text)))

    def resolve_industry(self, text: str) -> str | None:
        return self._industry_alias.get(" ".join(tokenize(text)))

    def resolve_policy(self, text: str, ignore_case: bool = False) -> str | None:
        text = text.strip()
        if _NORMALIZED_POLICY_RE.match(text):
            return text
        for pat in self.policy_patterns:
            rx = re.compile(pat.regex.pattern, re.IGNORECASE) if ignore_case else pat.regex
            m = rx.search(text)
            if m:
                return _policy_id(pat, m)
        return None

    def facet_tokens(self) -> frozenset[str]:
        """Tokens that look like facet values (used for off-facet down-weighting)."""
        toks: set[str] = set()
        for alias, cid in self.gazetteer.items():
            if cid != UNIVERSAL_REGION:
                toks.update(tokenize(alias))
        for alias in self._industry_alias:
            toks.update(tokenize(alias))
        return frozenset(toks)

    def is_facet_token(self, token: str) -> bool:
        t = token.lower()
        return bool(re.fullmatch(_YEAR, t) or re.fullmatch(r"q[1-4]", t)) or t in self._facet_token_cache()

    def alias_regexes(self) -> list[re.Pattern]:
        """Short aliases (<= 3 chars) match only in upper case, e.g. ``ON``."""
        cache = getattr(self, "_alias_rx", None)
        if cache is None:
            aliases = sorted(set(self.gazetteer) | set(self._industry_alias), key=lambda a: (-len(a), a))
            short = [re.escape(a.upper()) for a in aliases if len(a) <= 3]
            long_ = [re.escape(a).replace(r"\ ", r"\s+") for a in aliases if len(a) > 3]
            cache = []
            if long_:
                cache.append(re.compile(rf"(?<![\w-])(?:{'|'.join(long_)})(?![\w-])", re.IGNORECASE))
            if short:
                cache.append(re.compile(rf"(?<![\w-])(?:{'|'.join(short)})(?![\w-])"))
            self._alias_rx = cache
        return cache

    def _facet_token_cache(self) -> frozenset[str]:
        cache = getattr(self, "_ftok", None)
        if cache is None:
            cache = self.facet_tokens()
            object.__setattr__(self, "_ftok", cache)
        return cache


def _slug(text: str) -> str:
    return "-".join(tokenize(text))


def _policy_id(pat: PolicyPattern, m: re.Match) -> str:
    groups = m.groupdict()
    issuer = pat.issuer or (groups.get("issuer") or "").lower()
    prefix = pat.prefix if pat.prefix is not None else (groups.get("kind") or "").lower()
    ident = _slug(groups.get("ident") or m.group(0))
    return f"{issuer}:{prefix + '-' if prefix else ''}{ident}"


def policy_surface(policy_id: str) -> str:
    """Readable form of an ``issuer:identifier`` policy id (``oeb rule 12``)."""
    return " ".join(tokenize(policy_id))


# ---------------------------------------------------------------- time parsing

def _quarter(year: int, q: int) -> TimeInterval:
    sm = 3 * (q - 1) + 1
    em = sm + 2
    return TimeInterval(date(year, sm, 1), date(year, em, calendar.monthrange(year, em)[1]))


def _year(y: int) -> TimeInterval:
    return TimeInterval(date(y, 1, 1), date(y, 12, 31))


def parse_time(text: str) -> TimeInterval | None:
    """Parse a time mention into an interval; ``None`` if unrecognised."""
    s = text.strip()
    if _ONGOING_RE.fullmatch(s) or s.lower() == ONGOING_LABEL:
        return TimeInterval()
    if m := re.fullmatch(r"(\d{4}-\d{2}-\d{2}|\.\.)/(\d{4}-\d{2}-\d{2}|\.\.)", s):
        return TimeInterval.parse_iso(s)
    if m := _QUARTER_RE.fullmatch(s):
        if m.group(1):
            return _quarter(int(m.group(2)), int(m.group(1)))
        return _quarter(int(m.group(3)), int(m.group(4)))
    if m := _RANGE_RE.fullmatch(s):
        a, b = sorted((int(m.group(1)), int(m.group(2))))
        return TimeInterval(date(a, 1, 1), date(b, 12, 31))
    if m := _MONTH_RE.fullmatch(s):
        y, mo = int(m.group(2)), _MONTHS[m.group(1).lower()]
        return TimeInterval(date(y, mo, 1), date(y, mo, calendar.monthrange(y, mo)[1]))
    if m := _ISO_DATE_RE.fullmatch(s):
        d = date(int(m.group(1)), int(m.group(2)), int(m.group(3)))
        return TimeInterval(d, d)
    if m := _YEAR_RE.fullmatch(s):
        return _year(int(m.group(1)))
    if re.fullmatch(r"\d{4}-\d{4}", s):
        a, b = sorted(int(x) for x in s.split("-"))
        return TimeInterval(date(a, 1, 1), date(b, 12, 31))
    return None


# ---------------------------------------------------------- mention extraction

def extract_mentions(texts: Iterable[str], tables: FacetTables) -> list[str]:
    """Find facet-like surface mentions in free text, longest match wins."""
    out: list[str] = []
    for text in texts:
        spans: list[tuple[int, int, str]] = []
        for rx in (_ISO_INTERVAL_RE, _QUARTER_RE, _RANGE_RE, _MONTH_RE, _ISO_DATE_RE, _YEAR_RE, _ONGOING_RE):
            spans.extend((m.start(), m.end(), m.group(0)) for m in rx.finditer(text))
        for pat in tables.policy_patterns:
            spans.extend((m.start(), m.end(), m.group(0)) for m in pat.regex.finditer(text))
        for rx in tables.alias_regexes():
            spans.extend((m.start(), m.end(), m.group(0)) for m in rx.finditer(text))
        spans.sort(key=lambda s: (s[0], -(s[1] - s[0])))
        end = -1
        for s, e, surface in spans:
            if s >= end:
                out.append(surface)
                end = e
    return out


def classify_mention(mention: str, tables: FacetTables) -> tuple[str, object] | None:
    """Route one mention to ``(facet, normalized value)``."""
    t = parse_time(mention)
    if t is not None:
        return "time", t
    region = tables.resolve_region(mention)
    if region is not None:
        return "region", region
    policy = tables.resolve_policy(mention)
    if policy is not None:
        return "policy", policy
    industry = tables.resolve_industry(mention)
    if industry is not None:
        return "industry", industry
    return None


def _value_str(facet: str, value) -> str:
    return value.iso() if facet == "time" else str(value)


def normalize_facets(
    mentions: Sequence[str],
    vocab: "FacetVocab | None" = None,
    tables: FacetTables | None = None,
) -> FacetSet:
    """Normalize raw mentions into one value per core facet.

    Conflicts keep the candidate with the highest vocab z-score (then the most
    frequent, then the earliest); the losers are recorded in
    ``extras["<facet>_alternatives"]``. Unresolvable mentions go to
    ``extras["unresolved"]`` verbatim.
    """
    tables = tables or FacetTables.default()
    cands: dict[str, list[tuple[float, int, int, object]]] = {}
    counts: Counter = Counter()
    first_seen: dict[tuple[str, str], int] = {}
    unresolved: list[str] = []
    for pos, mention in enumerate(mentions):
        routed = classify_mention(mention, tables)
        if routed is None:
            if mention.strip() and mention not in unresolved:
                unresolved.append(mention)
            continue
        facet, value = routed
        key = (facet, _value_str(facet, value))
        counts[key] += 1
        if key not in first_seen:
            first_seen[key] = pos
        z = vocab.z_of(mention) if vocab is not None else 0.0
        cands.setdefault(facet, []).append((z, key[1], pos, value))
    chosen: dict[str, object] = {}
    extras: dict[str, tuple[str, ...]] = {}
    for facet, lst in cands.items():
        best: dict[str, tuple[float, int, int, object]] = {}
        for z, vstr, pos, value in lst:
            prev = best.get(vstr)
            if prev is None or z > prev[0]:
                best[vstr] = (z, counts[(facet, vstr)], first_seen[(facet, vstr)], value)
        ranked = sorted(best.items(), key=lambda kv: (-kv[1][0], -kv[1][1], kv[1][2]))
        chosen[facet] = ranked[0][1][3]
        if len(ranked) > 1:
            extras[f"{facet}_alternatives"] = tuple(sorted(v for v, _ in ranked[1:]))
    if unresolved:
        extras["unresolved"] = tuple(unresolved)
    return FacetSet(
        chosen.get("time"),
        chosen.get("region"),
        chosen.get("policy"),
        chosen.get("industry"),
        tuple(sorted(extras.items())),
    )


# ------------------------------------------------------------ vocab induction

@dataclass(frozen=True)
class FacetVocab:
    facets: dict[str, tuple[tuple[str, float], ...]]
    z_cut: float = 1.96

    def z_of(self, term: str) -> float:
        key = " ".join(tokenize(term))
        for entries in self.facets.values():
            for t, z in entries:
                if t == key:
                    return z
        return 0.0

    def terms(self, facet: str) -> list[str]:
        return [t for t, _ in self.facets.get(facet, ())]


def term_counts(texts: Iterable[str], max_n: int = 2) -> Counter:
    """Unigram..``max_n``-gram token counts (lowercased)."""
    counts: Counter = Counter()
    for text in texts:
        toks = tokenize(text)
        for n in range(1, max_n + 1):
            for i in range(len(toks) - n + 1):
                counts[" ".join(toks[i:i + n])] += 1
    return counts


def log_odds_z(domain: Mapping[str, float], background: Mapping[str, float]) -> dict[str, float]:
    """Log-odds ratio z-scores with an informative Dirichlet prior.

    The background counts act both as the comparison corpus and as the prior
    (each term's prior count is its background count, floored at 1).
    """
    vocab = sorted(set(domain) | set(background))
    prior = {w: max(float(background.get(w, 0.0)), 1.0) for w in vocab}
    a0 = sum(prior.values())
    n_d = float(sum(domain.values()))
    n_b = float(sum(background.values()))
    out = {}
    for w in vocab:
        a = prior[w]
        yd = float(domain.get(w, 0.0))
        yb = float(background.get(w, 0.0))
        delta = math.log((yd + a) / (n_d + a0 - yd - a)) - math.log((yb + a) / (n_b + a0 - yb - a))
        var = 1.0 / (yd + a) + 1.0 / (yb + a)
        out[w] = delta / math.sqrt(var)
    return out


def classify_term(term: str, tables: FacetTables) -> str:
    if parse_time(term) is not None or _YEAR_RE.search(term) or re.search(r"\bq[1-4]\b", term):
        return "time"
    if tables.resolve_region(term) is not None:
        return "region"
    if tables.resolve_policy(term, ignore_case=True) is not None:
        return "policy"
    if tables.resolve_industry(term) is not None:
        return "industry"
    return "extras"


def induce_facet_vocab(
    domain_corpus: Mapping[str, float],
    background_corpus: Mapping[str, float],
    z_cut: float = 1.96,
    tables: FacetTables | None = None,
) -> FacetVocab:
    """Keep domain-salient terms (z >= ``z_cut``) and route them to facets."""
    if not domain_corpus or not sum(domain_corpus.values()):
        raise EmptyCorpus("domain corpus is empty")
    if not background_corpus or not sum(background_corpus.values()):
        raise EmptyCorpus("background corpus is empty")
    tables = tables or FacetTables.default()
    zs = log_odds_z(domain_corpus, background_corpus)
    buckets: dict[str, list[tuple[str, float]]] = {}
    for term, z in zs.items():
        if z >= z_cut and domain_corpus.get(term, 0) > 0:
            buckets.setdefault(classify_term(term, tables), []).append((term.lower(), z))
    return FacetVocab(
        {k: tuple(sorted(v, key=lambda tz: (-tz[1], tz[0]))) for k, v in sorted(buckets.items())},
        z_cut,
    )


# ------------------------------------------------------------ indicator maps

@dataclass(frozen=True)
class FacetIndicatorMap:
    """Active facets with their values (rule order) and matching keywords."""

    values: dict[str, tuple[str, ...]]
    keywords: dict[str, tuple[str, ...]]

    @property
    def active_facets(self) -> list[str]:
        return [f for f in CORE_FACETS if f in self.keywords]

    def is_empty(self) -> bool:
        return not self.keywords

    def keyword_tokens(self) -> frozenset[str]:
        """Lower-case tokens of the keywords; short aliases are left out because
        a lower-cased token cannot tell ``ON`` from ``on``."""
        return frozenset(
            tok for f, kws in self.keywords.items() for kw in kws if not is_short_alias(f, kw) for tok in tokenize(kw)
        )

    def to_json(self) -> dict:
        return {"values": {k: list(v) for k, v in self.values.items()}, "keywords": {k: list(v) for k, v in self.keywords.items()}}

    @classmethod
    def empty(cls) -> "FacetIndicatorMap":
        return cls({}, {})


def facet_keywords(facet: str, value: str, tables: FacetTables) -> list[str]:
    if facet == "time":
        iv = TimeInterval.parse_iso(value)
        kws = {iv.label}
        if len(iv.years()) <= 3:
            kws.update(str(y) for y in iv.years())
        return sorted(kws)
    if facet == "region":
        return sorted({value.replace("-", " "), *tables.region_aliases(value)})
    if facet == "policy":
        return sorted({value, policy_surface(value)})
    if facet == "industry":
        return sorted({value, *tables.industry_aliases(value)})
    return [value]


def slot_text(facet: str, value: str) -> str:
    """Text inserted into a query for one facet value."""
    if facet == "time":
        return TimeInterval.parse_iso(value).label
    if facet in ("region", "policy"):
        return " ".join(tokenize(value))
    return value


def facet_indicators(experiences: Sequence, tables: FacetTables | None = None) -> FacetIndicatorMap:
    """Union of concrete facets over ``experiences`` (rules, in score order).

    Sentinel values (ongoing time, universal region) are not active facets.
    """
    if not experiences:
        raise NoExperiences("facet_indicators needs at least one experience")
    tables = tables or FacetTables.default()
    values: dict[str, list[str]] = {}
    for exp in experiences:
        fs = exp.facets if hasattr(exp, "facets") else exp
        for facet, val in fs.active().items():
            lst = values.setdefault(facet, [])
            if val not in lst:
                lst.append(val)
    ordered = [f for f in CORE_FACETS if f in values]
    return FacetIndicatorMap(
        {f: tuple(values[f]) for f in ordered},
        {f: tuple(sorted({kw for v in values[f] for kw in facet_keywords(f, v, tables)})) for f in ordered},
    )


ALIAS_FACETS = ("region", "industry")


def is_short_alias(facet: str, keyword: str) -> bool:
    """Region/industry aliases of <= 3 letters (``ON``, ``CA``) double as common words."""
    k = keyword.strip()
    return facet in ALIAS_FACETS and len(k) <= 3 and k.isalpha()


def facet_keyword_in(text: str, facet: str, keyword: str) -> bool:
    """:func:`contains_keyword`, except that short region/industry aliases
    match only when written in upper case, as in the facet tagger."""
    if is_short_alias(facet, keyword):
        return re.search(rf"(?<![A-Za-z0-9]){re.escape(keyword.strip().upper())}(?![A-Za-z0-9])", text) is not None
    return contains_keyword(text, keyword)


def contains_keyword(text: str, keyword: str) -> bool:
    """Whole-token, contiguous match of ``keyword`` inside ``text``."""
    hay = tokenize(text)
    needle = tokenize(keyword)
    if not needle:
        return False
    n = len(needle)
    return any(hay[i:i + n] == needle for i in range(len(hay) - n + 1))


def facetize(texts: Sequence[str], vocab: FacetVocab | None = None, tables: FacetTables | None = None) -> FacetSet:
    """Extract, normalize and sentinel-fill the facets of a group of texts."""
    tables = tables or FacetTables.default()
    return normalize_facets(extract_mentions(texts, tables), vocab, tables).with_sentinels()
