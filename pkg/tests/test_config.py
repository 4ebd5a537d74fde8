import json
from pathlib import Path

import pytest

from roadcotrain.config import ExperimentConfig, SplitConfig, benchmark_config
from roadcotrain.models import ConfigError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_round_trip_defaults():
    cfg = ExperimentConfig(seed=3)
    assert ExperimentConfig.from_json(cfg.to_json()) == cfg
    assert cfg.split.val_size == 128 and cfg.split.num_splits == 20


@pytest.mark.parametrize("name", ["benchmark.json", "smoke.json"])
def test_shipped_configs_round_trip(name):
    text = (CONFIGS / name).read_text()
    assert ExperimentConfig.from_json(text).to_json() == text


def test_shipped_benchmark_matches_code():
    assert ExperimentConfig.load(CONFIGS / "benchmark.json") == benchmark_config()


def test_partial_config_fills_defaults():
    cfg = ExperimentConfig.from_dict({"seed": 1, "split": {"num_splits": 3}, "cotrain": {"optim": {"eta0": 0.01}}})
    assert cfg.split.num_splits == 3 and cfg.split.train_size == 128
    assert cfg.cotrain.optim.eta0 == 0.01 and cfg.cotrain.seed == 1


@pytest.mark.parametrize("doc", [
    {},
    {"seed": 1, "bogus": 2},
    {"seed": 1, "split": {"nope": 1}},
    {"seed": 1, "cotrain": {"optim": {"lr": 1}}},
    {"seed": 1, "models": {"radar": {}}},
    {"seed": -1},
    {"seed": 1, "mode": "other"},
    {"seed": 1, "mode": "kitti-files"},
    {"seed": 1, "split": {"train_size": 8, "subset_sizes": [4, 16]}},
])
def test_invalid_configs(doc):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(doc)


def test_not_json():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json("{")


def test_overrides():
    cfg = ExperimentConfig(seed=1).with_overrides(seed=9, output_dir="x")
    assert cfg.seed == 9 and cfg.cotrain.seed == 9 and cfg.output_dir == "x"


def test_split_config_validation():
    with pytest.raises(ConfigError):
        SplitConfig(keep_every=0)


def test_json_is_sorted():
    doc = json.loads(ExperimentConfig(seed=0).to_json())
    assert list(doc) == sorted(doc)
