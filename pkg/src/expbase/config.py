"""Pipeline configuration: one JSON document, validated, with a stable digest."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigError
from .textmodel import DEFAULT_DIM


@dataclass(frozen=True)
class ClusteringConfig:
    paraphrase_threshold: float = 0.35
    view_weights: tuple[float, float, float] = (0.5, 0.3, 0.2)
    min_cluster_size: int = 2
    soft_threshold: float = 0.45
    merge_threshold: float = 0.85
    merge: bool = True


@dataclass(frozen=True)
class EvidenceConfig:
    alpha: float = 0.5
    top_n: int = 20
    mmr_lambda: float = 0.7
    mmr_n: int = 5
    jaccard_threshold: float = 0.8
    per_source_cap: int = 2


@dataclass(frozen=True)
class FacetConfig:
    z_cut: float = 1.96


@dataclass(frozen=True)
class RetrievalConfig:
    k: int = 5
    theta: float = 0.3


@dataclass(frozen=True)
class TrainingSection:
    tau: float = 0.07
    lr: float = 0.5
    epochs: int = 200
    pool_size: int = 64
    margin: float = 0.05
    n_neg: int = 8
    alpha_up: float = 0.5
    beta_down: float = 0.25
    weight_floor: float = 0.1
    lambda_ret: float = 1.0
    lambda_pref: float = 0.5
    lambda_cov: float = 0.5


@dataclass(frozen=True)
class PlannerConfig:
    M: int = 3
    mode: str = "reference"


@dataclass(frozen=True)
class SimConfig:
    n_topics: int = 20
    attributes_per_topic: int = 10
    distractors_per_question: int = 9
    hop_budget: int = 12


@dataclass(frozen=True)
class PipelineConfig:
    dim: int = DEFAULT_DIM
    seed: int = 0
    clustering: ClusteringConfig = field(default_factory=ClusteringConfig)
    evidence: EvidenceConfig = field(default_factory=EvidenceConfig)
    facets: FacetConfig = field(default_factory=FacetConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    training: TrainingSection = field(default_factory=TrainingSection)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    sim: SimConfig = field(default_factory=SimConfig)

    def __post_init__(self):
        validate(self)

    def to_json(self) -> dict:
        obj = asdict(self)
        obj["clustering"]["view_weights"] = list(self.clustering.view_weights)
        return obj

    def canonical(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "PipelineConfig":
        if not isinstance(obj, Mapping):
            raise ConfigError("config must be a JSON object")
        sections = {f.name: f.type for f in fields(cls)}
        kwargs: dict[str, Any] = {}
        for key, val in obj.items():
            if key not in sections:
                raise ConfigError(f"unknown config key {key!r}")
            sub = _SECTIONS.get(key)
            kwargs[key] = _section(sub, val, key) if sub else val
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path | None) -> "PipelineConfig":
        if path is None:
            return cls()
        try:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_json(obj)


_SECTIONS = {
    "clustering": ClusteringConfig,
    "evidence": EvidenceConfig,
    "facets": FacetConfig,
    "retrieval": RetrievalConfig,
    "training": TrainingSection,
    "planner": PlannerConfig,
    "sim": SimConfig,
}


def _section(cls, val, name):
    if not isinstance(val, Mapping):
        raise ConfigError(f"section {name!r} must be an object")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(val) - names)
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {unknown}")
    kw = dict(val)
    if "view_weights" in kw:
        kw["view_weights"] = tuple(kw["view_weights"])
    return cls(**kw)


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def _unit(x, name):
    _check(isinstance(x, (int, float)) and 0.0 <= x <= 1.0, f"{name} must be in [0, 1], got {x!r}")


def validate(cfg: PipelineConfig) -> None:
    _check(cfg.dim == DEFAULT_DIM, f"dim must be {DEFAULT_DIM} for the built-in embedder, got {cfg.dim}")
    _check(isinstance(cfg.seed, int), "seed must be an integer")
    c = cfg.clustering
    _unit(c.paraphrase_threshold, "clustering.paraphrase_threshold")
    w = c.view_weights
    _check(len(w) == 3 and min(w) >= 0 and abs(sum(w) - 1.0) <= 1e-9, "clustering.view_weights must be 3 non-negative values summing to 1")
    _check(isinstance(c.min_cluster_size, int) and c.min_cluster_size >= 2, "clustering.min_cluster_size must be >= 2")
    _check(0.0 < c.soft_threshold < 1.0, "clustering.soft_threshold must be in (0, 1)")
    _check(0.0 < c.merge_threshold <= 1.0, "clustering.merge_threshold must be in (0, 1]")
    e = cfg.evidence
    _unit(e.alpha, "evidence.alpha")
    _unit(e.mmr_lambda, "evidence.mmr_lambda")
    _check(e.top_n >= 1 and e.mmr_n >= 1 and e.per_source_cap >= 1, "evidence counts must be >= 1")
    _check(0.0 < e.jaccard_threshold <= 1.0, "evidence.jaccard_threshold must be in (0, 1]")
    _check(cfg.facets.z_cut >= 0, "facets.z_cut must be >= 0")
    r = cfg.retrieval
    _check(isinstance(r.k, int) and r.k >= 1, "retrieval.k must be >= 1")
    _unit(r.theta, "retrieval.theta")
    t = cfg.training
    _check(t.tau > 0, "training.tau must be > 0")
    _check(t.lr > 0, "training.lr must be > 0")
    _check(t.epochs >= 0, "training.epochs must be >= 0")
    _check(1 <= t.n_neg <= t.pool_size, "training requires 1 <= n_neg <= pool_size")
    _check(t.margin >= 0, "training.margin must be >= 0")
    _check(t.alpha_up >= 0 and t.beta_down >= 0 and t.weight_floor > 0, "plan-loss weights out of range")
    _check(min(t.lambda_ret, t.lambda_pref, t.lambda_cov) >= 0, "objective weights must be >= 0")
    p = cfg.planner
    _check(isinstance(p.M, int) and p.M >= 1, "planner.M must be >= 1")
    _check(p.mode in ("reference", "external"), "planner.mode must be reference or external")
    s = cfg.sim
    _check(s.n_topics >= 1 and s.attributes_per_topic >= 1, "sim sizes must be >= 1")
    _check(s.distractors_per_question >= 0 and s.hop_budget >= 0, "sim counts must be >= 0")
