"""Command-line entry point.

Pipeline parameters come from one JSON config document; flags only pick the
command, paths and seed. Every command writes one JSON document to stdout and
a human-readable table to stderr. Failures print a single JSON error line to
stderr and exit non-zero.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .canonicalize import load_dataset
from .config import PipelineConfig
from .errors import ConfigError, ExpBaseError
from .pipeline import build_base, streaming_update
from .planner import generate_plan
from .ports import ENV_PLANNER_URL, JsonHttpClient
from .retrieval import FALLBACK, GateConfig, topk_experiences
from .store import empty_base, load_base, read_manifest, save_base
from .training import TrainingConfig, toy_separable_set, train_projection


class CommandError(ExpBaseError):
    pass


def _emit(obj: dict, table: str) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True, indent=1, ensure_ascii=False) + "\n")
    if table:
        sys.stderr.write(table.rstrip("\n") + "\n")


def _table(rows: Sequence[tuple[str, object]]) -> str:
    width = max((len(k) for k, _ in rows), default=0)
    return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def _has_store(path: Path) -> bool:
    return (path / "manifest.json").exists()


def _load_projection(path: str | None, dim: int) -> np.ndarray | None:
    if path is None:
        return None
    P = np.load(path)
    if P.shape != (dim, dim):
        raise ConfigError(f"projection has shape {P.shape}, expected ({dim}, {dim})")
    return P


# ------------------------------------------------------------ commands

def cmd_build(args, cfg: PipelineConfig) -> dict:
    tuples = load_dataset(args.dataset)
    out = Path(args.out)
    parent = load_base(out) if _has_store(out) else empty_base(cfg.digest)
    base = build_base(tuples, cfg, parent=parent)
    save_base(base, out)
    res = {"version": base.version, "rules": len(base.rules), "rule_ids": sorted(base.rules), "config_digest": cfg.digest}
    _emit(res, _table([("version", base.version), ("rules", len(base.rules)), ("store", str(out))]))
    return res


def cmd_refresh(args, cfg: PipelineConfig) -> dict:
    store = Path(args.store)
    read_manifest(store)
    base = load_base(store)
    new = streaming_update(base, load_dataset(args.dataset), cfg)
    save_base(new, store)
    added = sorted(set(new.rules) - set(base.rules))
    res = {"version": new.version, "rules": len(new.rules), "added": added, "merged": sorted(set(new.aliases) - set(base.aliases))}
    _emit(res, _table([("version", new.version), ("rules", len(new.rules)), ("added", len(added))]))
    return res


def _gate_cfg(cfg: PipelineConfig) -> GateConfig:
    return GateConfig(cfg.retrieval.k, cfg.retrieval.theta)


def cmd_retrieve(args, cfg: PipelineConfig) -> dict:
    base = load_base(args.store)
    P = _load_projection(args.projection, cfg.dim)
    got = topk_experiences(args.query, base, _gate_cfg(cfg), P)
    res = got.to_json()
    rows = [(rid, f"{s:.4f}") for rid, s in got.items]
    rows.append(("gate", f"{got.gate_decision} (confidence {got.gate_confidence:.4f})"))
    _emit(res, _table(rows))
    return res


def cmd_plan(args, cfg: PipelineConfig) -> dict:
    base = load_base(args.store)
    got = topk_experiences(args.query, base, _gate_cfg(cfg), _load_projection(args.projection, cfg.dim))
    service = JsonHttpClient.from_env(ENV_PLANNER_URL) if cfg.planner.mode == "external" else None
    plan = generate_plan(args.query, got, base, cfg.planner.M, cfg.planner.mode, service)
    res = {**plan.to_json(), "fallback": plan.gate_decision == FALLBACK, "retrieved": got.to_json()}
    rows = [(f"z{i + 1}", z) for i, z in enumerate(plan.queries)]
    rows.append(("fallback", res["fallback"]))
    _emit(res, _table(rows))
    return res


def _read_pairs(path: str) -> list[tuple[str, str]]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                pairs.append((str(obj["query"]), str(obj["positive"])))
            except (KeyError, json.JSONDecodeError) as exc:
                raise CommandError(f"{path}:{lineno}: bad training pair: {exc}") from exc
    return pairs


def cmd_train(args, cfg: PipelineConfig) -> dict:
    t = cfg.training
    tcfg = TrainingConfig(t.tau, t.lr, t.epochs, args.seed, t.pool_size, t.margin, t.n_neg)
    if args.toy:
        rules, pairs, _ = toy_separable_set(args.seed)
        base = rules
    else:
        if not (args.store and args.pairs):
            raise CommandError("train needs --store and --pairs, or --toy")
        base = load_base(args.store)
        pairs = _read_pairs(args.pairs)
    result = train_projection(pairs, base, tcfg)
    if args.out:
        np.save(args.out, result.projection)
    losses = result.losses
    res = {
        "epochs": len(losses),
        "initial_loss": losses[0] if losses else None,
        "final_loss": losses[-1] if losses else None,
        "losses": losses,
        "projection": args.out,
    }
    if losses:
        rows = [("initial loss", f"{losses[0]:.6f}"), ("final loss", f"{losses[-1]:.6f}"), ("epochs", len(losses))]
    else:
        rows = [("epochs", 0)]
    _emit(res, _table(rows))
    return res


def _sim_spec(cfg: PipelineConfig):
    from .simeval.bench import default_spec

    return default_spec(cfg)


def cmd_simulate(args, cfg: PipelineConfig) -> dict:
    from .simeval.corpus import build_sim_corpus

    corpus = build_sim_corpus(_sim_spec(cfg), seed=args.seed)
    corpus.save(args.out)
    res = {"seed": args.seed, "pages": len(corpus.pages), "questions": len(corpus.questions),
           "experiences": len(corpus.experiences), "fingerprint": corpus.fingerprint()}
    _emit(res, _table([(k, res[k]) for k in ("pages", "questions", "experiences", "fingerprint")]))
    return res


def cmd_eval(args, cfg: PipelineConfig) -> dict:
    from .simeval.bench import ablation_table, evaluate, variant_settings
    from .simeval.corpus import SimCorpus, build_sim_corpus

    corpus = SimCorpus.load(args.corpus) if args.corpus else build_sim_corpus(_sim_spec(cfg), seed=args.seed)
    options, gate_cfg, generic = variant_settings(args.variant, cfg)
    if args.store:
        base = load_base(args.store)
    else:
        base = build_base(corpus.experiences, cfg, options=options, created_at="")
    report = evaluate(corpus, base, cfg, gate_cfg, generic, args.variant, limit=args.limit)
    text = report.dumps()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    res = report.to_json()
    _emit(res, ablation_table({args.variant: report}))
    return res


def cmd_ablate(args, cfg: PipelineConfig) -> dict:
    from .simeval.bench import GENERIC, VARIANTS, ablation_table, report_digest, run_ablation

    variants = [v.strip() for v in (args.variants or "").split(",") if v.strip()]
    if not variants:
        raise CommandError("variant list is empty")
    bad = [v for v in variants if v not in VARIANTS + (GENERIC,)]
    if bad:
        raise CommandError(f"unknown variants {bad}; choose from {list(VARIANTS + (GENERIC,))}")
    reports = run_ablation(variants, cfg, seed=args.seed)
    res = {"seed": args.seed, "variants": {v: r.aggregate for v, r in reports.items()}, "digest": report_digest(reports)}
    _emit(res, ablation_table(reports))
    return res


COMMANDS = {
    "build": cmd_build,
    "refresh": cmd_refresh,
    "retrieve": cmd_retrieve,
    "plan": cmd_plan,
    "train": cmd_train,
    "simulate": cmd_simulate,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="expbase", description="Build and use an expert experience base.")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name: str, help_: str) -> argparse.ArgumentParser:
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="pipeline config JSON (defaults when omitted)")
        sp.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        return sp

    sp = add("build", "full build from a QA JSONL dataset")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--out", required=True, help="store directory")

    sp = add("refresh", "streaming update of an existing store")
    sp.add_argument("--store", required=True)
    sp.add_argument("--dataset", required=True)

    for name, help_ in (("retrieve", "top-k rules and gate decision"), ("plan", "facet-grounded query plan")):
        sp = add(name, help_)
        sp.add_argument("--store", required=True)
        sp.add_argument("--query", required=True)
        sp.add_argument("--projection", help=".npy projection from `train`")

    sp = add("train", "train the retrieval projection")
    sp.add_argument("--store")
    sp.add_argument("--pairs", help="JSONL of {query, positive}")
    sp.add_argument("--toy", action="store_true", help="use the built-in separable toy set")
    sp.add_argument("--out", help="where to save the projection (.npy)")

    sp = add("simulate", "generate a synthetic benchmark corpus")
    sp.add_argument("--out", required=True)

    sp = add("eval", "evaluate one variant on a synthetic corpus")
    sp.add_argument("--corpus", help="corpus directory from `simulate` (generated from seed when omitted)")
    sp.add_argument("--store", help="use this store instead of building from the corpus experiences")
    sp.add_argument("--variant", default="full")
    sp.add_argument("--limit", type=int)
    sp.add_argument("--out", help="write the report JSON here")

    sp = add("ablate", "compare variants on one seeded corpus")
    sp.add_argument("--variants", default="full,no_merge,no_sentence_embed,k1")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        # validate the config before touching any input
        cfg = PipelineConfig.load(args.config)
        if args.seed is None:
            args.seed = cfg.seed
        else:
            cfg = replace(cfg, seed=args.seed)
        COMMANDS[args.command](args, cfg)
    except (ExpBaseError, ValueError, KeyError, OSError) as exc:
        err = {"error": type(exc).__name__, "command": args.command, "message": str(exc).strip("'\"")}
        sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
