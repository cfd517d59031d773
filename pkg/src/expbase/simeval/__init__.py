"""Synthetic web benchmark: corpus generator, browsing controller, metrics, stress tests."""

from .bench import VARIANTS, EvalReport, ablation_table, evaluate, run_ablation
from .controller import PageIndex, Trajectory, run_controller
from .corpus import SimCorpus, SimPage, SimQuestion, SimSpec, build_sim_corpus
from .metrics import exact_match, f1, ndcg_at_10, page_hops, qp_at_3
from .stress import StressResult, invert, stress_transform

__all__ = [
    "VARIANTS", "EvalReport", "ablation_table", "evaluate", "run_ablation",
    "PageIndex", "Trajectory", "run_controller",
    "SimCorpus", "SimPage", "SimQuestion", "SimSpec", "build_sim_corpus",
    "exact_match", "f1", "ndcg_at_10", "page_hops", "qp_at_3",
    "StressResult", "invert", "stress_transform",
]
