import json

import pytest

from expbase.config import PipelineConfig
from expbase.errors import ConfigError


def test_defaults_validate():
    cfg = PipelineConfig()
    assert cfg.retrieval.k == 5 and cfg.retrieval.theta == 0.3 and cfg.training.tau == 0.07 and cfg.planner.M == 3


def test_digest_stable_across_key_order():
    a = PipelineConfig.from_json({"retrieval": {"k": 3, "theta": 0.4}, "seed": 2})
    b = PipelineConfig.from_json({"seed": 2, "retrieval": {"theta": 0.4, "k": 3}})
    assert a.digest == b.digest
    assert a.digest != PipelineConfig().digest


def test_round_trip():
    cfg = PipelineConfig.from_json({"clustering": {"view_weights": [0.6, 0.2, 0.2]}})
    assert PipelineConfig.from_json(json.loads(cfg.canonical())) == cfg


@pytest.mark.parametrize("bad", [
    {"retrieval": {"theta": 1.1}},
    {"retrieval": {"k": 0}},
    {"training": {"tau": 0}},
    {"clustering": {"view_weights": [0.5, 0.5, 0.5]}},
    {"clustering": {"soft_threshold": 1.0}},
    {"planner": {"mode": "llm"}},
    {"unknown": 1},
    {"retrieval": {"kk": 1}},
    {"retrieval": 3},
    [],
])
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        PipelineConfig.from_json(bad)


def test_load_errors(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{oops")
    with pytest.raises(ConfigError):
        PipelineConfig.load(p)
    with pytest.raises(ConfigError):
        PipelineConfig.load(tmp_path / "missing.json")
    assert PipelineConfig.load(None) == PipelineConfig()
