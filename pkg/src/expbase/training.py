"""Training objectives: facet-weighted plan loss, contrastive retrieval loss over a
linear projection, pairwise preference loss, coverage, and a small trainer."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import numpy as np

from .errors import DegenerateVector, DimensionMismatch, UnnormalizedModel
from .facets import FacetIndicatorMap, FacetTables, facet_keyword_in
from .retrieval import RuleIndex, select_hard_negatives
from .textmodel import embed_text, tokenize

_NORM_EPS = 1e-12


# ------------------------------------------------------------ retrieval loss

@dataclass(frozen=True)
class ContrastiveBatch:
    query: np.ndarray
    positive: np.ndarray
    negatives: np.ndarray
    tau: float = 0.07

    def __post_init__(self):
        q = np.asarray(self.query, dtype=np.float64)
        p = np.asarray(self.positive, dtype=np.float64)
        n = np.atleast_2d(np.asarray(self.negatives, dtype=np.float64))
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if n.shape[0] < 1 or n.size == 0:
            raise ValueError("need at least one negative")
        if q.ndim != 1 or p.shape != q.shape or n.shape[1] != q.shape[0]:
            raise DimensionMismatch(f"query {q.shape}, positive {p.shape}, negatives {n.shape}")
        object.__setattr__(self, "query", q)
        object.__setattr__(self, "positive", p)
        object.__setattr__(self, "negatives", n)


def _unit(u: np.ndarray) -> tuple[np.ndarray, float]:
    n = float(np.linalg.norm(u))
    if n < _NORM_EPS:
        raise DegenerateVector("projected vector has (near) zero norm")
    return u / n, n


def loss_ret(batch: ContrastiveBatch, projection: np.ndarray) -> tuple[float, np.ndarray]:
    """InfoNCE loss on projected cosines and its gradient w.r.t. ``projection``.

    Vectors are row vectors: the projection of ``x`` is ``x @ projection``.
    """
    P = np.asarray(projection, dtype=np.float64)
    cands = np.vstack([batch.positive[None, :], batch.negatives])
    uq, nq = _unit(batch.query @ P)
    units, norms = zip(*(_unit(c @ P) for c in cands))
    U = np.vstack(units)
    s = U @ uq
    logits = s / batch.tau
    m = logits.max()
    lse = m + math.log(float(np.exp(logits - m).sum()))
    loss = lse - logits[0]

    p = np.exp(logits - lse)
    dl_ds = p.copy()
    dl_ds[0] -= 1.0
    dl_ds /= batch.tau

    # d s_i / d u_q = (û_i - s_i û_q) / |u_q| ; d s_i / d u_i = (û_q - s_i û_i) / |u_i|
    g_q = ((dl_ds[:, None] * (U - s[:, None] * uq[None, :])).sum(axis=0)) / nq
    G = dl_ds[:, None] * (uq[None, :] - s[:, None] * U) / np.asarray(norms)[:, None]
    grad = np.outer(batch.query, g_q) + cands.T @ G
    return float(max(loss, 0.0)), grad


# ------------------------------------------------------------ token models

class TokenModel(Protocol):
    vocab: Sequence[str]

    def prob(self, token: str, prev: str | None) -> float: ...

    def check_normalized(self, tol: float = 1e-6) -> None: ...


BOS = "<s>"
UNK = "<unk>"


class BigramModel:
    """Bigram table ``π(y_t | y_{t-1})``; row ``BOS`` is the start distribution."""

    def __init__(self, vocab: Sequence[str], table: np.ndarray):
        vocab = list(vocab)
        if UNK not in vocab:
            raise ValueError(f"vocab must contain {UNK!r}")
        self.vocab = vocab
        self._index = {t: i for i, t in enumerate(vocab)}
        self.table = np.asarray(table, dtype=np.float64)
        if self.table.shape != (len(vocab) + 1, len(vocab)):
            raise DimensionMismatch(f"table must be {(len(vocab) + 1, len(vocab))}, got {self.table.shape}")

    @classmethod
    def fit(cls, sequences: Sequence[Sequence[str]], smoothing: float = 0.1, vocab: Sequence[str] | None = None) -> "BigramModel":
        if vocab is None:
            vocab = sorted({t for seq in sequences for t in seq} | {UNK})
        else:
            vocab = list(vocab) + ([UNK] if UNK not in vocab else [])
        idx = {t: i for i, t in enumerate(vocab)}
        V = len(vocab)
        counts = np.full((V + 1, V), float(smoothing))
        for seq in sequences:
            prev = V
            for tok in seq:
                j = idx.get(tok, idx[UNK])
                counts[prev, j] += 1.0
                prev = j
        counts /= counts.sum(axis=1, keepdims=True)
        return cls(vocab, counts)

    def _row(self, prev: str | None) -> int:
        if prev is None or prev == BOS:
            return len(self.vocab)
        return self._index.get(prev, self._index[UNK])

    def prob(self, token: str, prev: str | None) -> float:
        return float(self.table[self._row(prev), self._index.get(token, self._index[UNK])])

    def check_normalized(self, tol: float = 1e-6) -> None:
        if (self.table <= 0).any():
            raise UnnormalizedModel("probabilities must be strictly positive")
        dev = np.abs(self.table.sum(axis=1) - 1.0).max()
        if dev > tol:
            raise UnnormalizedModel(f"rows sum to 1 within {dev:.3g} > {tol}")


def sequence_log_prob(tokens: Sequence[str], model: TokenModel) -> list[float]:
    out, prev = [], None
    for tok in tokens:
        out.append(math.log(model.prob(tok, prev)))
        prev = tok
    return out


# ------------------------------------------------------------ plan loss

@dataclass(frozen=True)
class PlanLossConfig:
    alpha_up: float = 0.5
    beta_down: float = 0.25
    weight_floor: float = 0.1

    def __post_init__(self):
        if self.alpha_up < 0 or self.beta_down < 0:
            raise ValueError("alpha_up and beta_down must be >= 0")
        if self.weight_floor <= 0:
            raise ValueError("weight_floor must be > 0")


def token_weights(
    tokens: Sequence[str],
    phi: FacetIndicatorMap,
    cfg: PlanLossConfig = PlanLossConfig(),
    tables: FacetTables | None = None,
) -> list[float]:
    """Up-weight tokens of active facet keywords, down-weight other facet-like tokens.

    With no active facet nothing is off-facet, so every weight is 1.
    """
    if not phi.active_facets:
        return [1.0] * len(tokens)
    tables = tables or FacetTables.default()
    on = phi.keyword_tokens()
    out = []
    for tok in tokens:
        t = tok.lower()
        if t in on:
            w = 1.0 + cfg.alpha_up
        elif tables.is_facet_token(t):
            w = 1.0 - cfg.beta_down
        else:
            w = 1.0
        out.append(max(w, cfg.weight_floor))
    return out


def loss_plan(
    tokens: Sequence[str],
    model: TokenModel,
    phi: FacetIndicatorMap,
    cfg: PlanLossConfig = PlanLossConfig(),
    tables: FacetTables | None = None,
) -> float:
    if not tokens:
        raise ValueError("token sequence must be non-empty")
    model.check_normalized()
    lps = sequence_log_prob(tokens, model)
    ws = token_weights(tokens, phi, cfg, tables)
    return -math.fsum(w * lp for w, lp in zip(ws, lps))


# ------------------------------------------------------------ preference / coverage

def loss_pref(score_preferred: float, score_rejected: float) -> float:
    """``-log sigmoid(preferred - rejected)``, computed stably."""
    return float(np.logaddexp(0.0, -(score_preferred - score_rejected)))


def coverage_score(plan, phi: FacetIndicatorMap) -> float:
    """Fraction of active facets with a keyword present in some plan query.

    ``plan`` is a QueryPlan or a list of query strings.
    """
    queries = list(getattr(plan, "queries", plan))
    active = phi.active_facets
    if not active:
        return 1.0
    hit = sum(any(facet_keyword_in(q, f, kw) for q in queries for kw in phi.keywords[f]) for f in active)
    return hit / len(active)


@dataclass(frozen=True)
class PreferencePair:
    query: str
    preferred_plan: tuple[str, ...]
    rejected_plan: tuple[str, ...]


def load_preference_pairs(path: str | Path) -> list[PreferencePair]:
    """JSON Lines of ``{query, preferred_plan: [str], rejected_plan: [str]}``."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                pair = PreferencePair(str(obj["query"]), tuple(obj["preferred_plan"]), tuple(obj["rejected_plan"]))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad preference pair: {exc}") from exc
            if not pair.preferred_plan or not pair.rejected_plan:
                raise ValueError(f"{path}:{lineno}: plans must be non-empty")
            out.append(pair)
    return out


@dataclass(frozen=True)
class ObjectiveWeights:
    ret: float = 1.0
    pref: float = 0.5
    cov: float = 0.5


def combined_objective(
    plan_loss: float,
    ret_loss: float,
    pref_loss: float,
    coverage: float,
    weights: ObjectiveWeights = ObjectiveWeights(),
) -> float:
    return plan_loss + weights.ret * ret_loss + weights.pref * pref_loss + weights.cov * (1.0 - coverage)


# ------------------------------------------------------------ trainer

@dataclass(frozen=True)
class TrainingConfig:
    tau: float = 0.07
    lr: float = 0.5
    epochs: int = 200
    seed: int = 0
    pool_size: int = 64
    margin: float = 0.05
    n_neg: int = 8
    cosine_decay: bool = True
    # full-scale recipe metadata, not used by the toy loop
    recipe: Mapping[str, float] = field(default_factory=lambda: {"lr": 1e-5, "beta2": 0.98})

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.pool_size < self.n_neg or self.n_neg < 1:
            raise ValueError("need 1 <= n_neg <= pool_size")


@dataclass(frozen=True)
class TrainResult:
    projection: np.ndarray
    losses: list[float]


def _rule_texts(base) -> dict[str, str]:
    if isinstance(base, Mapping):
        return {k: (v if isinstance(v, str) else v.text) for k, v in base.items()}
    return {rid: r.text for rid, r in base.rules.items()}


def train_projection(
    dataset: Sequence[tuple[str, str]],
    base,
    cfg: TrainingConfig = TrainingConfig(),
) -> TrainResult:
    """Full-batch gradient descent on mean ``loss_ret`` from an identity start.

    ``dataset`` holds ``(query, positive_rule_id)`` pairs over ``base``. Hard
    negatives are re-mined with the current projection at every epoch; the
    loss curve records the mean loss at the start of each epoch.
    """
    if not dataset:
        raise ValueError("training dataset is empty")
    texts = _rule_texts(base)
    missing = sorted({p for _, p in dataset if p not in texts})
    if missing:
        raise KeyError(f"positives not in base: {missing}")
    index = RuleIndex(texts)
    vec = {rid: index.matrix[i] for i, rid in enumerate(index.rule_ids)}
    queries = [(embed_text(q), p) for q, p in dataset]
    dim = index.matrix.shape[1]
    P = np.eye(dim)
    rng = np.random.default_rng(cfg.seed)
    order = np.arange(len(queries))
    losses: list[float] = []
    for epoch in range(cfg.epochs):
        rng.shuffle(order)
        total, grad, used = 0.0, np.zeros_like(P), 0
        for i in order:
            qv, pos = queries[i]
            mined = select_hard_negatives(index.scores(qv, P), [pos], cfg.pool_size, cfg.margin, cfg.n_neg)
            if not mined.rule_ids:
                continue
            batch = ContrastiveBatch(qv, vec[pos], np.vstack([vec[r] for r in mined.rule_ids]), cfg.tau)
            l, g = loss_ret(batch, P)
            total += l
            grad += g
            used += 1
        if used == 0:
            losses.append(0.0)
            break
        losses.append(total / used)
        lr = cfg.lr * (0.5 * (1.0 + math.cos(math.pi * epoch / cfg.epochs)) if cfg.cosine_decay else 1.0)
        P = P - lr * grad / used
    return TrainResult(P, losses)


# ------------------------------------------------------------ toy data

_TOY_TOPICS = {
    "fx": ["currency", "hedge", "forward", "exposure", "exchange", "swap"],
    "div": ["dividend", "payout", "yield", "equity", "income", "shareholder"],
}
_TOY_NOISE = ["quarterly", "report", "analyst", "review", "summary", "update", "memo", "briefing", "desk", "note"]


def toy_separable_set(seed: int = 0, n_train: int = 20, n_test: int = 50):
    """Two topics; queries mix topic words with shared office-noise words.

    Returns ``(rules, train_pairs, test_pairs)``. Distractor rules consist of
    noise words only, so the identity projection is often fooled while a
    learned projection that suppresses noise n-grams is not.
    """
    rng = np.random.default_rng(seed)
    rules = {f"r-{t}": " ".join(words) for t, words in _TOY_TOPICS.items()}
    for j in range(8):
        picks = rng.choice(_TOY_NOISE, size=3, replace=False)
        rules[f"r-noise{j}"] = " ".join(picks)

    def sample(n: int) -> list[tuple[str, str]]:
        out = []
        topics = sorted(_TOY_TOPICS)
        for i in range(n):
            t = topics[i % 2]
            words = list(rng.choice(_TOY_TOPICS[t], size=2, replace=False)) + list(
                rng.choice(_TOY_NOISE, size=4, replace=False)
            )
            rng.shuffle(words)
            out.append((" ".join(words), f"r-{t}"))
        return out

    return rules, sample(n_train), sample(n_test)


def tokens_of(text: str) -> list[str]:
    return tokenize(text)
