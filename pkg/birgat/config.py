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
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Dict, Mapping, Optional, Tuple

import yaml

from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .errors import ConfigError
from .optim import TrainConfig


@dataclass(frozen=True)
class DataConfig:
    train: Optional[str] = None
    dev: Optional[str] = None
    test: Optional[str] = None
    # Generation.
    samples: int = 2500
    cross_domain: float = 0.0
    max_intents: Optional[int] = None
    ratios: Tuple[float, float, float] = (0.8, 0.1, 0.1)
    workers: int = 1
    p_unaligned: Optional[float] = None
    p_duplicate: Optional[float] = None
    intent_counts: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "ratios", tuple(self.ratios))
        if self.intent_counts is not None:
            object.__setattr__(
                self, "intent_counts", tuple(self.intent_counts)
            )


@dataclass(frozen=True)
class ExperimentConfig:
    few_shot_sizes: Tuple[int, ...] = (5, 10, 20, 50)
    finetune_steps: int = 200
    max_train_intents: int = 3
    held_out_fraction: float = 0.3
    seeds: Tuple[int, ...] = (0, 1, 2)
    beam: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "few_shot_sizes", tuple(self.few_shot_sizes))
        object.__setattr__(self, "seeds", tuple(self.seeds))


@dataclass(frozen=True)
class RunConfig:
    """Everything one command needs: input paths, model and training
    hyperparameters, the seed and the output directory."""

    ontology: Optional[str] = None
    grammar: Optional[str] = None
    checkpoint: Optional[str] = None
    out: str = "out"
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    experiments: ExperimentConfig = field(default_factory=ExperimentConfig)

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        return _plain(doc)


_SECTIONS = {
    "data": DataConfig,
    "encoder": EncoderConfig,
    "decoder": DecoderConfig,
    "train": TrainConfig,
    "experiments": ExperimentConfig,
}


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _field_names(cls) -> set:
    return {f.name for f in dataclasses.fields(cls)}


def _build(cls, doc: Mapping[str, Any], where: str):
    if not isinstance(doc, Mapping):
        raise ConfigError(f"{where} must be a mapping")
    unknown = sorted(set(doc) - _field_names(cls))
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {unknown}")
    try:
        return cls(**doc)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _merge(base: dict, overrides: Mapping[str, Any]) -> dict:
    out = {k: (dict(v) if isinstance(v, dict) else v) for k, v in base.items()}
    for key, value in overrides.items():
        if value is None:
            continue
        section, _, name = key.partition(".")
        if name:
            if section not in _SECTIONS:
                raise ConfigError(f"unknown section {section!r}")
            out.setdefault(section, {})[name] = value
        else:
            out[section] = value
    return out


def run_config_from_dict(
    doc: Mapping[str, Any], overrides: Mapping[str, Any] = {}
) -> RunConfig:
    """Build a RunConfig from a nested mapping, then apply ``overrides``
    keyed by ``name`` or ``section.name``; None overrides are ignored."""
    if doc is None:
        doc = {}
    if not isinstance(doc, Mapping):
        raise ConfigError("the configuration document must be a mapping")
    doc = _merge(dict(doc), overrides)
    unknown = sorted(set(doc) - _field_names(RunConfig))
    if unknown:
        raise ConfigError(f"unknown configuration keys: {unknown}")
    kwargs = {}
    for key, value in doc.items():
        if key in _SECTIONS:
            kwargs[key] = _build(_SECTIONS[key], value or {}, key)
        else:
            kwargs[key] = value
    return RunConfig(**kwargs)


def load_run_config(
    path: Optional[str] = None, overrides: Mapping[str, Any] = {}
) -> RunConfig:
    doc: Dict[str, Any] = {}
    if path is not None:
        with open(path, encoding="utf-8") as f:
            try:
                doc = yaml.safe_load(f) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(f"{path}: {exc}") from None
    return run_config_from_dict(doc, overrides)
