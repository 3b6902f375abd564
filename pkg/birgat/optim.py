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

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, Mapping, Optional, Tuple

import numpy

from .errors import ConfigError, NonFiniteGradient
from .nn import ParamStore
from .tensor import Tensor
from .types import real_ty

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-4
    weight_decay: float = 1e-4
    warmup_ratio: float = 0.1
    batch_size: int = 20
    total_steps: int = 20000
    betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    grad_clip_norm: float = 5.0
    seed: int = 0
    eval_every: int = 500
    eval_limit: Optional[int] = None
    bucket_batches: int = 50
    progress: Optional[bool] = None

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if not 0.0 < self.warmup_ratio < 1.0:
            raise ConfigError(
                f"warmup_ratio must lie in (0, 1), got {self.warmup_ratio}"
            )
        positive = (
            "lr",
            "batch_size",
            "total_steps",
            "adam_eps",
            "grad_clip_norm",
            "eval_every",
            "bucket_batches",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        if len(self.betas) != 2 or not all(0 <= b < 1 for b in self.betas):
            raise ConfigError("betas must be two numbers in [0, 1)")
        if self.eval_limit is not None and self.eval_limit <= 0:
            raise ConfigError("eval_limit must be positive")

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["betas"] = list(self.betas)
        return doc

    def replace(self, **changes) -> "TrainConfig":
        doc = asdict(self)
        doc.update(changes)
        return TrainConfig(**doc)


def lr_schedule(step: int, config: TrainConfig) -> float:
    """Learning-rate multiplier: linear from 0 to 1 over the first
    ``warmup_ratio * total_steps`` steps, then linear back to 0 at
    ``total_steps``."""
    total = config.total_steps
    assert 0 <= step <= total, f"step {step} outside [0, {total}]"
    warm = config.warmup_ratio * total
    if step <= warm:
        return step / warm
    return max(0.0, (total - step) / (total - warm))


@dataclass
class Moments:
    first: Dict[str, numpy.ndarray] = field(default_factory=dict)
    second: Dict[str, numpy.ndarray] = field(default_factory=dict)
    step: int = 0

    def state_dict(self) -> Dict[str, numpy.ndarray]:
        out = {}
        for name, arr in self.first.items():
            out[f"adam.m.{name}"] = arr.copy()
        for name, arr in self.second.items():
            out[f"adam.v.{name}"] = arr.copy()
        return out

    @classmethod
    def from_state_dict(
        cls, state: Mapping[str, numpy.ndarray], step: int
    ) -> "Moments":
        moments = cls(step=step)
        for key, arr in state.items():
            if key.startswith("adam.m."):
                moments.first[key[len("adam.m.") :]] = numpy.array(arr)
            elif key.startswith("adam.v."):
                moments.second[key[len("adam.v.") :]] = numpy.array(arr)
        return moments


def _gradients(params: Mapping[str, Tensor]) -> Dict[str, numpy.ndarray]:
    grads = {}
    for name, p in params.items():
        g = numpy.zeros_like(p.data) if p.grad is None else p.grad
        if not numpy.isfinite(g).all():
            raise NonFiniteGradient(name)
        grads[name] = g
    return grads


def global_norm(grads: Mapping[str, numpy.ndarray]) -> float:
    return float(
        numpy.sqrt(sum(float(numpy.vdot(g, g)) for g in grads.values()))
    )


def clip_gradients(
    grads: Dict[str, numpy.ndarray], max_norm: float
) -> Tuple[Dict[str, numpy.ndarray], float]:
    """Rescale all gradients together so their global L2 norm is at most
    ``max_norm``. Returns the clipped gradients and the norm before
    clipping."""
    norm = global_norm(grads)
    if norm <= max_norm:
        return grads, norm
    factor = max_norm / norm
    return {name: g * factor for name, g in grads.items()}, norm


def adamw_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, numpy.ndarray],
    moments: Moments,
    lr: float,
    config: TrainConfig,
) -> None:
    """One bias-corrected Adam update with decoupled weight decay, applied
    in place. ``lr`` is the already scheduled learning rate."""
    moments.step += 1
    t = moments.step
    b1, b2 = config.betas
    correct1 = 1.0 - b1**t
    correct2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient of {name!r} has shape {g.shape}")
        m = moments.first.get(name)
        v = moments.second.get(name)
        if m is None:
            m = numpy.zeros_like(p.data, dtype=real_ty)
            v = numpy.zeros_like(p.data, dtype=real_ty)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        moments.first[name] = m
        moments.second[name] = v
        update = (m / correct1) / (numpy.sqrt(v / correct2) + config.adam_eps)
        p.data = p.data - lr * update - lr * config.weight_decay * p.data


class AdamW:
    """AdamW over a ParamStore, with global gradient clipping and the
    warmup/decay schedule."""

    def __init__(self, store: ParamStore, config: TrainConfig):
        self.store = store
        self.config = config
        self.moments = Moments()

    @property
    def step_count(self) -> int:
        return self.moments.step

    def current_lr(self) -> float:
        step = min(self.moments.step + 1, self.config.total_steps)
        return self.config.lr * lr_schedule(step, self.config)

    def step(self) -> float:
        """Apply one update from the gradients held by the store and clear
        them. Returns the gradient norm before clipping. Raises
        NonFiniteGradient, leaving parameters and moments untouched, when
        any gradient is not finite."""
        params = dict(self.store.items())
        grads, norm = clip_gradients(
            _gradients(params), self.config.grad_clip_norm
        )
        adamw_step(
            params, grads, self.moments, self.current_lr(), self.config
        )
        self.store.zero_grad()
        return norm

    def state_dict(self) -> Dict[str, numpy.ndarray]:
        return self.moments.state_dict()

    def load_state_dict(
        self, state: Mapping[str, numpy.ndarray], step: int
    ) -> None:
        self.moments = Moments.from_state_dict(state, step)
