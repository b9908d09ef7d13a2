import pytest
import yaml

from ttmkit.config import RunConfig, build, from_dict, parse_override
from ttmkit.errors import ConfigError


def test_defaults_validate():
    cfg = build()
    assert cfg.seed == 0 and cfg.vmma.mode == "coarse"
    assert cfg.model_config().prompt_mode == "coarse"


def test_top_level_seed_reaches_every_stream():
    cfg = build(overrides=["seed=9"])
    assert cfg.train_config().seed == 9 and cfg.scenario_config().seed == 9
    assert cfg.train_config(seed=2).seed == 2


def test_precedence_flags_over_file_over_defaults(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("train: {epochs: 3, lr: 0.01}\nseed: 4\n")
    cfg = build(path, ["train.epochs=7"])
    assert (cfg.train.epochs, cfg.train.lr, cfg.seed) == (7, 0.01, 4)
    assert cfg.train.batch_size == RunConfig().train.batch_size


@pytest.mark.parametrize("tree", [
    {"colour": {}},
    {"train": {"colour": 1}},
    {"train": 5},
    {"train": {"seed": 1}},       # seeds come from the top level only
    {"seed": -1},
    {"vmma": {"mode": "sideways"}},
    {"vmma": {"threshold": 2.0}},
    {"eval": {"seeds": []}},
    {"model": {"n_feat": 5}},     # disagrees with scenario.n_feat
])
def test_invalid_configs(tree):
    with pytest.raises(ConfigError):
        from_dict(tree)


def test_bad_files(tmp_path):
    with pytest.raises(ConfigError):
        build(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("train: [unclosed\n")
    with pytest.raises(ConfigError):
        build(bad)


def test_override_parsing():
    assert parse_override("train.lr=1e-4") == {"train": {"lr": 1e-4}}
    assert parse_override("eval.seeds=[1, 2]") == {"eval": {"seeds": [1, 2]}}
    for text in ("novalue", "=3"):
        with pytest.raises(ConfigError):
            parse_override(text)


def test_yaml_round_trip_and_digest():
    cfg = build(overrides=["train.epochs=3", "vmma.mode=fine"])
    back = from_dict(yaml.safe_load(cfg.to_yaml()))
    assert back == cfg and back.digest() == cfg.digest()
    assert build().digest() != cfg.digest()
