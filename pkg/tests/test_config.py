import pytest
import yaml

from recamera.config import apply_overrides, dump_yaml, from_dict, load_yaml, to_dict
from recamera.dataset import DatasetConfig
from recamera.errors import ConfigError
from recamera.train import TrainConfig


def test_round_trip_through_yaml(tmp_path):
    cfg = TrainConfig(lr=3e-4, cond_noise_steps=(100, 300), steps=7)
    dump_yaml(cfg, tmp_path / "c.yaml")
    assert from_dict(TrainConfig, load_yaml(tmp_path / "c.yaml")) == cfg


def test_nested_and_tuple_coercion():
    cfg = from_dict(DatasetConfig, {"n_scenes": 3, "scene": {"frames": 4, "half_size": [0.2, 0.4]}})
    assert cfg.scene.frames == 4 and cfg.scene.half_size == (0.2, 0.4)
    assert from_dict(TrainConfig, {"lr": 1}).lr == 1.0
    assert to_dict(cfg)["scene"]["half_size"] == [0.2, 0.4]


@pytest.mark.parametrize("data", [{"learning_rate": 1e-3}, {"model": {"width_px": 3}}])
def test_unknown_keys_rejected(data):
    with pytest.raises(ConfigError):
        from_dict(TrainConfig, data)


def test_overrides():
    data = {"model": {"dim": 64}}
    out = apply_overrides(data, ["model.depth=3", "lr=2e-4", "cond_noise_steps=[0, 0]", "dataset=/x"])
    assert out["model"] == {"dim": 64, "depth": 3} and out["cond_noise_steps"] == [0, 0]
    assert from_dict(TrainConfig, out).lr == 2e-4
    assert data == {"model": {"dim": 64}}  # input untouched
    with pytest.raises(ConfigError):
        apply_overrides({}, ["novalue"])
    with pytest.raises(ConfigError):
        apply_overrides({"lr": 1.0}, ["lr.x=1"])
    with pytest.raises(ConfigError):
        apply_overrides({}, ["lr=[1, 2"])


@pytest.mark.parametrize("data", [{"lr": "fast"}, {"steps": 1.5}, {"freeze": "yes"}, {"dataset": 3}])
def test_wrong_types_rejected(data):
    with pytest.raises(ConfigError):
        from_dict(TrainConfig, data)


def test_bad_yaml(tmp_path):
    (tmp_path / "list.yaml").write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_yaml(tmp_path / "list.yaml")
    (tmp_path / "broken.yaml").write_text("a: [1, 2\n")
    with pytest.raises(ConfigError):
        load_yaml(tmp_path / "broken.yaml")
    assert yaml.safe_load("a: 1") == {"a": 1}
