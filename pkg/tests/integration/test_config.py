# Copyright 2024 The birgat developers
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

import pytest
from utils.common import toy_config_file

from birgat.config import RunConfig, load_run_config, run_config_from_dict
from birgat.errors import ConfigError
from birgat.settings import settings

DOCUMENT = """
seed: 3
out: runs/toy
data:
  samples: 400
  ratios: [0.6, 0.2, 0.2]
encoder:
  m: 32
  heads: 4
  gnn: gat
train:
  lr: 0.001
  total_steps: 50
experiments:
  few_shot_sizes: [5, 10]
"""


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(DOCUMENT)
    return str(path)


def test_defaults():
    cfg = load_run_config()
    assert cfg == RunConfig()
    assert cfg.encoder.gnn == "rgat"
    assert cfg.decoder.beam == 5
    assert cfg.train.total_steps == 20000


def test_shipped_toy_config():
    cfg = load_run_config(toy_config_file)
    assert cfg.seed == 42 and cfg.train.seed == 42
    assert cfg.data.intent_counts == (1, 2, 3)
    assert cfg.experiments.seeds == (0, 1, 2)
    assert cfg.encoder.gnn == "rgat" and cfg.decoder.copy


def test_load_document(config_file):
    cfg = load_run_config(config_file)
    assert cfg.seed == 3
    assert cfg.out == "runs/toy"
    assert cfg.data.samples == 400
    assert cfg.data.ratios == (0.6, 0.2, 0.2)
    assert cfg.encoder.m == 32 and cfg.encoder.gnn == "gat"
    assert cfg.encoder.layers == 2
    assert cfg.train.lr == 0.001
    assert cfg.experiments.few_shot_sizes == (5, 10)


def test_overrides(config_file):
    cfg = load_run_config(
        config_file,
        {"train.lr": 0.01, "encoder.gnn": None, "seed": 9, "decoder.beam": 1},
    )
    assert cfg.train.lr == 0.01
    assert cfg.encoder.gnn == "gat"
    assert cfg.seed == 9
    assert cfg.decoder.beam == 1


def test_to_dict_round_trip(config_file):
    cfg = load_run_config(config_file)
    doc = cfg.to_dict()
    assert doc["data"]["ratios"] == [0.6, 0.2, 0.2]
    assert run_config_from_dict(doc) == cfg


@pytest.mark.parametrize(
    "doc, overrides",
    [
        ({"colour": "red"}, {}),
        ({"encoder": {"width": 3}}, {}),
        ({"encoder": ["m", 3]}, {}),
        ({"encoder": {"m": 30, "heads": 4}}, {}),
        ({"train": {"warmup_ratio": 2.0}}, {}),
        ({}, {"optimizer.lr": 0.1}),
        ({}, {"train.momentum": 0.9}),
        ({}, {"colour": "red"}),
        ([1, 2], {}),
    ],
)
def test_bad_configuration(doc, overrides):
    with pytest.raises(ConfigError):
        run_config_from_dict(doc, overrides)


def test_bad_yaml(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("train: [")
    with pytest.raises(ConfigError):
        load_run_config(str(path))


def test_settings_priority(monkeypatch):
    monkeypatch.delenv("BIRGAT_EVAL_WORKERS", raising=False)
    assert settings.eval_workers() == 1
    monkeypatch.setenv("BIRGAT_EVAL_WORKERS", "4")
    assert settings.eval_workers() == 4
    settings.eval_workers.set_value("2")
    try:
        assert settings.eval_workers() == 2
    finally:
        settings.eval_workers.unset_value()
    assert settings.eval_workers() == 4
    monkeypatch.setenv("BIRGAT_LONG_TESTS", "maybe")
    with pytest.raises(ValueError):
        settings.long_tests()
    assert set(settings.all()) == {"log_level", "eval_workers", "long_tests"}


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main(sys.argv))
