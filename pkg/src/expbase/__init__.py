"""Expert experience base: distill QA tuples into cited, faceted rules and use
them to plan domain-grounded search queries."""

from .canonicalize import QATuple, SourceRef, load_dataset
from .config import PipelineConfig
from .pipeline import BuildOptions, build_base, streaming_update
from .planner import QueryPlan, generate_plan
from .retrieval import GateConfig, RetrievedExperiences, topk_experiences
from .store import ExperienceBaseVersion, load_base, save_base

__version__ = "0.1.0"

__all__ = [
    "QATuple", "SourceRef", "load_dataset", "PipelineConfig", "BuildOptions", "build_base",
    "streaming_update", "QueryPlan", "generate_plan", "GateConfig", "RetrievedExperiences",
    "topk_experiences", "ExperienceBaseVersion", "load_base", "save_base",
]
