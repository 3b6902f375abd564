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
from typing import Callable, Dict, Mapping, Optional, Sequence, Union

import numpy

from .errors import NonFiniteValue
from .nn import ParamStore
from .tensor import Tape, Tensor

log = logging.getLogger(__name__)

Params = Union[ParamStore, Mapping[str, Tensor], Sequence[Tensor]]


def _named(params: Params) -> Dict[str, Tensor]:
    if isinstance(params, ParamStore):
        return dict(params.items())
    if isinstance(params, Mapping):
        return dict(params)
    return {(p.name or f"arg{i}"): p for i, p in enumerate(params)}


def _scalar(loss: Tensor, what: str) -> float:
    if loss.size != 1:
        raise ValueError(f"{what} must be scalar, got shape {loss.shape}")
    value = loss.item()
    if not numpy.isfinite(value):
        raise NonFiniteValue(f"{what} is {value}")
    return value


# grad_check_report compares reverse-mode gradients of the scalar function
# f against central differences and returns, for every tensor, the relative
# error ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-8) over
# the checked entries. When max_entries is set, a seeded sample of at most
# that many entries is checked per tensor.
def grad_check_report(
    f: Callable[[], Tensor],
    params: Params,
    eps: float = 1e-5,
    max_entries: Optional[int] = None,
    seed: int = 0,
) -> Dict[str, float]:
    named = _named(params)
    for p in named.values():
        assert p.requires_grad, "grad_check needs trainable tensors"
        assert p.data.flags.c_contiguous
        p.zero_grad()
    with Tape() as tape:
        loss = f()
        _scalar(loss, "loss")
        tape.backward(loss)
    tape.release()

    rng = numpy.random.default_rng(seed)
    report = {}
    for name, p in named.items():
        analytic = numpy.zeros_like(p.data) if p.grad is None else p.grad
        if not numpy.isfinite(analytic).all():
            raise NonFiniteValue(f"gradient of {name!r} is not finite")
        flat = p.data.reshape(-1)
        if max_entries is None or flat.size <= max_entries:
            entries = numpy.arange(flat.size)
        else:
            entries = numpy.sort(
                rng.choice(flat.size, size=max_entries, replace=False)
            )
        numeric = numpy.empty(entries.shape[0])
        for k, i in enumerate(entries):
            orig = flat[i]
            flat[i] = orig + eps
            plus = _scalar(f(), "loss")
            flat[i] = orig - eps
            minus = _scalar(f(), "loss")
            flat[i] = orig
            numeric[k] = (plus - minus) / (2.0 * eps)
        picked = analytic.reshape(-1)[entries]
        denom = max(
            numpy.linalg.norm(picked), numpy.linalg.norm(numeric), 1e-8
        )
        report[name] = float(numpy.linalg.norm(picked - numeric) / denom)
        p.zero_grad()
    return report


def grad_check(
    f: Callable[[], Tensor],
    params: Params,
    eps: float = 1e-5,
    max_entries: Optional[int] = None,
    seed: int = 0,
) -> float:
    """Maximum relative gradient error of ``f`` over ``params``.

    Parameters
    ----------
    f : callable
        Zero-argument function returning a scalar Tensor computed from
        ``params``. It must be deterministic (dropout disabled).
    params : ParamStore, mapping or sequence of Tensor
        Trainable tensors to perturb.
    eps : float
        Central difference step.
    max_entries : int, optional
        Check at most this many entries per tensor.

    Returns
    -------
    float
        The maximum over tensors of the per-tensor relative error.
    """
    report = grad_check_report(f, params, eps, max_entries, seed)
    return max(report.values(), default=0.0)
