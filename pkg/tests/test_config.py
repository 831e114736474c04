import json

import pytest

from ulmsr.config import SMALL_TRAIN, ConfigError, PipelineConfig, load_config, published_defaults


def test_round_trip_and_digest():
    cfg = PipelineConfig()
    back = PipelineConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert back == cfg
    assert back.digest() == cfg.digest()
    assert cfg.override("train", lr=1e-3).digest() != cfg.digest()


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="train.learning_rate"):
        PipelineConfig.from_dict({"train": {"learning_rate": 1.0}})
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"nonsense": 1})


@pytest.mark.parametrize("bad", [
    {"train": {"batch_size": "64"}},
    {"train": {"batch_size": 1.5}},
    {"preprocess": {"washout": 1}},
    {"distributions": {"n_sources": [1, 2, 3]}},
    {"train": {"adam_beta1": 1.5}},
    {"grid": "32"},
])
def test_bad_values_rejected(bad):
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict(bad)


def test_partial_config_fills_defaults(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"seed": 5, "train": {"lr": 1}, "preprocess": {"roi": [0, 0, 8, 8]}}))
    cfg = load_config(path)
    assert cfg.seed == 5 and cfg.train.lr == 1.0 and isinstance(cfg.train.lr, float)
    assert cfg.preprocess.roi == (0, 0, 8, 8)
    assert cfg.train.batch_size == 64


def test_override_ignores_none():
    cfg = PipelineConfig()
    assert cfg.override("train", lr=None) is cfg
    assert cfg.override("train", **SMALL_TRAIN).train.batch_size == 16
    with pytest.raises(ConfigError):
        cfg.override("bogus", x=1)


def test_malformed_json(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text("{")
    with pytest.raises(ConfigError):
        load_config(path)


def test_published_defaults_keys():
    d = published_defaults()
    assert d["hr_pixel_um"] == 31.25 and d["n_blocks"] == 9
