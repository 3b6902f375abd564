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

import math
from dataclasses import dataclass
from typing import Dict, Iterator, Optional, Sequence, Tuple

import numpy

from . import tensor as T
from .errors import ConfigError, ShapeMismatch
from .tensor import Tensor
from .types import real_ty

INIT_STD = 0.02


class ParamStore:
    """Named trainable tensors, iterated in registration order.

    Parameters are drawn from a generator seeded at construction, so two
    stores that register the same names in the same order hold identical
    values.
    """

    def __init__(self, seed: int = 0):
        self._params: Dict[str, Tensor] = {}
        self._inits: Dict[str, str] = {}
        self.rng = numpy.random.default_rng(seed)

    def add(
        self, name: str, shape, init: str = "normal", std: float = INIT_STD
    ) -> Tensor:
        if name in self._params:
            raise ValueError(f"parameter {name!r} registered twice")
        shape = tuple(int(s) for s in shape)
        if init == "normal":
            data = self.rng.normal(0.0, std, size=shape)
        elif init == "zeros":
            data = numpy.zeros(shape, dtype=real_ty)
        elif init == "ones":
            data = numpy.ones(shape, dtype=real_ty)
        else:
            raise ValueError(f"unknown initializer {init!r}")
        param = Tensor(data, requires_grad=True, name=name)
        self._params[name] = param
        self._inits[name] = init
        return param

    def scope(self, prefix: str) -> "Scope":
        return Scope(self, prefix)

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def num_parameters(self) -> int:
        return sum(p.size for p in self._params.values())

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.zero_grad()

    def state_dict(self) -> Dict[str, numpy.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_state_dict(self, state: Dict[str, numpy.ndarray]) -> None:
        missing = [n for n in self._params if n not in state]
        extra = [n for n in state if n not in self._params]
        if missing or extra:
            raise ConfigError(
                f"parameter mismatch: missing {missing[:5]}, "
                f"unexpected {extra[:5]}"
            )
        for name, p in self._params.items():
            value = numpy.asarray(state[name], dtype=real_ty)
            if value.shape != p.shape:
                raise ShapeMismatch(f"load {name}", p.shape, value.shape)
            p.data = value.copy()


class Scope:
    """A dotted-name view onto a ParamStore."""

    def __init__(self, store: ParamStore, prefix: str):
        self.store = store
        self.prefix = prefix

    def _name(self, name: str) -> str:
        return f"{self.prefix}.{name}"

    def add(self, name, shape, init="normal", std=INIT_STD) -> Tensor:
        return self.store.add(self._name(name), shape, init=init, std=std)

    def scope(self, sub: str) -> "Scope":
        return Scope(self.store, self._name(sub))

    def __getitem__(self, name: str) -> Tensor:
        return self.store[self._name(name)]

    def __contains__(self, name: str) -> bool:
        return self._name(name) in self.store


# Mode carries what differs between a training forward pass and an
# inference one: whether dropout is active and the generator it draws from.
@dataclass
class Mode:
    train: bool = False
    rate: float = 0.0
    rng: Optional[numpy.random.Generator] = None

    def drop(self, x: Tensor) -> Tensor:
        return T.dropout(x, self.rate, self.train, self.rng)


EVAL = Mode()


def add_linear(scope: Scope, n_in: int, n_out: int, bias: bool = True):
    scope.add("W", (n_in, n_out))
    if bias:
        scope.add("b", (n_out,), init="zeros")


def linear(x, scope: Scope) -> Tensor:
    out = T.matmul(x, scope["W"])
    if "b" in scope:
        out = out + scope["b"]
    return out


def add_norm(scope: Scope, m: int):
    scope.add("gain", (m,), init="ones")
    scope.add("bias", (m,), init="zeros")


def norm(x, scope: Scope) -> Tensor:
    return T.layer_norm(x, scope["gain"], scope["bias"])


# residual_norm is the post-norm sub-layer wrapper
# LayerNorm(x + Dropout(sub(x))).
def residual_norm(x, sub, scope: Scope, mode: Mode) -> Tensor:
    return norm(T.add(x, mode.drop(sub)), scope)


def add_ffn(scope: Scope, m: int, inner: int):
    add_linear(scope.scope("in"), m, inner)
    add_linear(scope.scope("out"), inner, m)


def ffn(x, scope: Scope) -> Tensor:
    return linear(T.relu(linear(x, scope.scope("in"))), scope.scope("out"))


def split_heads(x: Tensor, heads: int) -> Tensor:
    """(B, n, m) -> (B, heads, n, m / heads)."""
    b, n, m = x.shape
    assert m % heads == 0
    return T.transpose(T.reshape(x, (b, n, heads, m // heads)), (0, 2, 1, 3))


def merge_heads(x: Tensor) -> Tensor:
    b, h, n, d = x.shape
    return T.reshape(T.transpose(x, (0, 2, 1, 3)), (b, n, h * d))


def add_attention(scope: Scope, m: int):
    scope.add("W_q", (m, m))
    scope.add("W_k", (m, m))
    scope.add("W_v", (m, m))
    add_linear(scope.scope("out"), m, m)


def multihead_attention(
    query: Tensor,
    memory: Tensor,
    scope: Scope,
    heads: int,
    mode: Mode = EVAL,
    key_mask=None,
    causal: bool = False,
) -> Tuple[Tensor, Tensor]:
    """Scaled dot-product attention of ``query`` (B, nq, m) over ``memory``
    (B, nk, m) or (nk, m) shared by the batch.

    Returns the output projection (B, nq, m) and the attention weights
    (B, heads, nq, nk) before dropout. ``key_mask`` is a (B, nk) boolean
    array with True for real keys.
    """
    if query.shape[-1] != memory.shape[-1]:
        raise ShapeMismatch("attention", query.shape, memory.shape)
    if memory.ndim == 2:
        memory = T.expand(memory, (query.shape[0],) + memory.shape)
    m = query.shape[-1]
    q = split_heads(T.matmul(query, scope["W_q"]), heads)
    k = split_heads(T.matmul(memory, scope["W_k"]), heads)
    v = split_heads(T.matmul(memory, scope["W_v"]), heads)
    scores = T.scale(T.matmul(q, k.T), 1.0 / math.sqrt(m // heads))
    mask = attention_mask(key_mask, query.shape[1], memory.shape[1], causal)
    weights = T.softmax(scores, axis=-1, mask=mask)
    out = merge_heads(T.matmul(mode.drop(weights), v))
    return linear(out, scope.scope("out")), weights


# attention_mask combines a (B, nk) key padding mask and an optional causal
# mask into an array broadcastable against (B, heads, nq, nk) scores.
def attention_mask(key_mask, nq: int, nk: int, causal: bool = False):
    mask = None
    if key_mask is not None:
        mask = numpy.asarray(key_mask, dtype=bool)[:, None, None, :]
    if causal:
        tri = numpy.tril(numpy.ones((nq, nk), dtype=bool), k=nk - nq)
        mask = tri if mask is None else (mask & tri)
    return mask


# Gate order inside every LSTM parameter name: input, forget, candidate,
# output.
LSTM_GATES = ("i", "f", "g", "o")


def add_lstm(scope: Scope, n_in: int, n_hidden: int):
    for gate in LSTM_GATES:
        scope.add(f"W_x{gate}", (n_in, n_hidden))
        scope.add(f"W_h{gate}", (n_hidden, n_hidden))
        scope.add(f"b_{gate}", (n_hidden,), init="zeros")


def lstm_cell(x, h, c, scope: Scope) -> Tuple[Tensor, Tensor]:
    x, h, c = T.as_tensor(x), T.as_tensor(h), T.as_tensor(c)
    n_in, n_hidden = scope["W_xi"].shape
    if x.shape[-1] != n_in:
        raise ShapeMismatch("lstm_cell input", x.shape, (n_in,))
    if h.shape[-1] != n_hidden or c.shape != h.shape:
        raise ShapeMismatch("lstm_cell state", h.shape, c.shape)

    def gate(name):
        return (
            T.matmul(x, scope[f"W_x{name}"])
            + T.matmul(h, scope[f"W_h{name}"])
            + scope[f"b_{name}"]
        )

    i = T.sigmoid(gate("i"))
    f = T.sigmoid(gate("f"))
    g = T.tanh(gate("g"))
    o = T.sigmoid(gate("o"))
    c_next = f * c + i * g
    h_next = o * T.tanh(c_next)
    return h_next, c_next


def _run_lstm(x: Tensor, lengths: numpy.ndarray, scope: Scope) -> Tensor:
    n, steps, _ = x.shape
    n_hidden = scope["W_hi"].shape[0]
    h = T.Tensor(numpy.zeros((n, n_hidden), dtype=real_ty))
    c = T.Tensor(numpy.zeros((n, n_hidden), dtype=real_ty))
    for t in range(steps):
        h_next, c_next = lstm_cell(x[:, t, :], h, c, scope)
        keep = (t < lengths)[:, None]
        if keep.all():
            h, c = h_next, c_next
        else:
            h = T.where(keep, h_next, h)
            c = T.where(keep, c_next, c)
    return h


def bilstm(
    x: Tensor, lengths: Sequence[int], forward: Scope, backward: Scope
) -> Tensor:
    """Single-layer bidirectional LSTM over a padded batch (N, T, n_in).

    Returns (N, 2 * hidden): the forward direction's state after the last
    real token concatenated with the backward direction's state after the
    first one. Padding never enters either direction.
    """
    lengths = numpy.asarray(lengths)
    n, steps, _ = x.shape
    assert (lengths >= 1).all() and (lengths <= steps).all()
    t = numpy.arange(steps)[None, :]
    reverse = numpy.where(t < lengths[:, None], lengths[:, None] - 1 - t, t)
    x_rev = T.getitem(x, (numpy.arange(n)[:, None], reverse))
    return T.concat(
        [_run_lstm(x, lengths, forward), _run_lstm(x_rev, lengths, backward)],
        axis=-1,
    )
