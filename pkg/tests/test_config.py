import json

import pytest

from scenemem.config import ConfigError, ExperimentConfig, from_dict, load_config, save_config


def test_defaults_consistent():
    cfg = from_dict({})
    assert cfg.agent.v_lm == cfg.world.v_lm == 16
    assert cfg.training.alpha == 0.2 and cfg.training.gamma == 0.9


def test_partial_override():
    cfg = from_dict({"training": {"iterations": 7}, "world": {"scenes": 3}})
    assert cfg.training.iterations == 7 and cfg.world.scenes == 3
    assert cfg.training.lr == ExperimentConfig().training.lr


def test_roundtrip(tmp_path):
    cfg = from_dict({"agent": {"d": 16, "variant": "CE+GE"}, "training": {"seed": 4}})
    save_config(tmp_path / "c.json", cfg)
    assert load_config(tmp_path / "c.json").to_dict() == cfg.to_dict()


@pytest.mark.parametrize(
    "doc",
    [
        [],
        {"optimizer": {}},
        {"agent": {"depth": 3}},
        {"agent": []},
        {"agent": {"d": 7}},
        {"training": {"alpha": 2.0}},
        {"world": {"v_lm": 8}},
        {"agent": {"k_max": 6}},
    ],
)
def test_rejects_bad_configs(doc):
    with pytest.raises(ConfigError):
        from_dict(doc)


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{nope")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json")
    (tmp_path / "ok.json").write_text(json.dumps({"training": {"iterations": 1}}))
    assert load_config(tmp_path / "ok.json").training.iterations == 1
