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

import threading
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy
import scipy.special

from .errors import EmptyNeighborhood, ShapeMismatch
from .types import index_ty, real_ty

# A dense, double precision tensor with reverse-mode differentiation. An
# operation is recorded only while a Tape is active on the current thread
# and at least one of its inputs requires a gradient; everything else runs
# as plain numpy, which is the inference path.

_local = threading.local()


def _tape_stack() -> List["Tape"]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def current_tape() -> Optional["Tape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Records operations in execution order, which is a topological order
    of the computation graph, and replays them backwards."""

    def __init__(self):
        self.nodes: List[Tensor] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _tape_stack().pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, node: "Tensor") -> None:
        self.nodes.append(node)

    def backward(self, root: "Tensor", grad=None) -> None:
        if grad is None:
            if root.data.size != 1:
                raise ShapeMismatch("backward", root.shape, ())
            grad = numpy.ones_like(root.data)
        root.accumulate_grad(numpy.asarray(grad, dtype=real_ty))
        # Consumers are always recorded after their inputs, so by the time
        # a node is visited its gradient has been fully accumulated.
        for node in reversed(self.nodes):
            if node.grad is None or node._backward is None:
                continue
            node._backward(node.grad)

    def release(self) -> None:
        for node in self.nodes:
            node._backward = None
            node._parents = ()
        self.nodes = []


class Tensor:
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name=None):
        self.data = numpy.asarray(data, dtype=real_ty)
        self.requires_grad = requires_grad
        self.name = name
        self.grad: Optional[numpy.ndarray] = None
        self._parents: Tuple[Tensor, ...] = ()
        self._backward: Optional[Callable[[numpy.ndarray], None]] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> numpy.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def accumulate_grad(self, g: numpy.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ShapeMismatch("accumulate_grad", self.data.shape, g.shape)
        if self.grad is None:
            self.grad = numpy.array(g, dtype=real_ty)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return swapaxes(self, -1, -2)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


ArrayLike = Union[Tensor, numpy.ndarray, float, int]


def as_tensor(x: ArrayLike) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _result(data, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    tape = current_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        tape.record(out)
    return out


def _send(t: Tensor, g: numpy.ndarray) -> None:
    if t.requires_grad:
        t.accumulate_grad(g)


# _unbroadcast sums a gradient back down to the shape of an input that was
# broadcast in the forward pass.
def _unbroadcast(g: numpy.ndarray, shape: Tuple[int, ...]) -> numpy.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(
        i
        for i, (gs, s) in enumerate(zip(g.shape, shape))
        if s == 1 and gs != 1
    )
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(op, a: Tensor, b: Tensor) -> None:
    try:
        numpy.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(op, a.shape, b.shape) from None


# Elementwise arithmetic.


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def backward(g):
        _send(a, _unbroadcast(g, a.shape))
        _send(b, _unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), backward)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)

    def backward(g):
        _send(a, _unbroadcast(g, a.shape))
        _send(b, _unbroadcast(-g, b.shape))

    return _result(a.data - b.data, (a, b), backward)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def backward(g):
        _send(a, _unbroadcast(g * b.data, a.shape))
        _send(b, _unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), backward)


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    out = a.data / b.data

    def backward(g):
        _send(a, _unbroadcast(g / b.data, a.shape))
        _send(b, _unbroadcast(-g * out / b.data, b.shape))

    return _result(out, (a, b), backward)


def neg(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    return _result(-x.data, (x,), lambda g: _send(x, -g))


def scale(x: ArrayLike, c: float) -> Tensor:
    x = as_tensor(x)
    c = float(c)
    return _result(x.data * c, (x,), lambda g: _send(x, g * c))


# Linear algebra and shape manipulation.


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch("matmul", a.shape, b.shape)
    try:
        out = numpy.matmul(a.data, b.data)
    except ValueError:
        raise ShapeMismatch("matmul", a.shape, b.shape) from None

    def backward(g):
        if a.requires_grad:
            _send(a, _unbroadcast(g @ numpy.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            _send(b, _unbroadcast(numpy.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _result(out, (a, b), backward)


def transpose(x: ArrayLike, axes=None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inverse = tuple(numpy.argsort(axes))
    return _result(
        numpy.transpose(x.data, axes),
        (x,),
        lambda g: _send(x, numpy.transpose(g, inverse)),
    )


def swapaxes(x: ArrayLike, axis1: int, axis2: int) -> Tensor:
    x = as_tensor(x)
    return _result(
        numpy.swapaxes(x.data, axis1, axis2),
        (x,),
        lambda g: _send(x, numpy.swapaxes(g, axis1, axis2)),
    )


def reshape(x: ArrayLike, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeMismatch("reshape", x.shape, shape) from None
    return _result(out, (x,), lambda g: _send(x, g.reshape(x.shape)))


def expand(x: ArrayLike, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = numpy.array(numpy.broadcast_to(x.data, shape))
    except ValueError:
        raise ShapeMismatch("expand", x.shape, shape) from None
    return _result(out, (x,), lambda g: _send(x, _unbroadcast(g, x.shape)))


def concat(xs: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    try:
        out = numpy.concatenate([x.data for x in xs], axis=axis)
    except ValueError:
        raise ShapeMismatch(
            "concat", xs[0].shape, xs[-1].shape if xs else ()
        ) from None
    sizes = [x.shape[axis] for x in xs]
    splits = numpy.cumsum(sizes)[:-1]

    def backward(g):
        for x, piece in zip(xs, numpy.split(g, splits, axis=axis)):
            _send(x, piece)

    return _result(out, xs, backward)


def getitem(x: ArrayLike, index) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        gx = numpy.zeros_like(x.data)
        numpy.add.at(gx, index, g)
        _send(x, gx)

    return _result(x.data[index], (x,), backward)


# slice_axis takes the half-open range [start, stop) along one axis.
def slice_axis(x: ArrayLike, start: int, stop: int, axis: int = 0) -> Tensor:
    x = as_tensor(x)
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    return getitem(x, tuple(index))


# Reductions.


def _expand_reduced(g, shape, axis, keepdims):
    if axis is not None and not keepdims:
        g = numpy.expand_dims(g, axis)
    return numpy.broadcast_to(g, shape)


def sum(x: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    return _result(
        x.data.sum(axis=axis, keepdims=keepdims),
        (x,),
        lambda g: _send(x, _expand_reduced(g, x.shape, axis, keepdims)),
    )


def mean(x: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size / max(out.size, 1)
    return _result(
        out,
        (x,),
        lambda g: _send(
            x, _expand_reduced(g / count, x.shape, axis, keepdims)
        ),
    )


# Pointwise nonlinearities.


def exp(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    out = numpy.exp(x.data)
    return _result(out, (x,), lambda g: _send(x, g * out))


def log(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    return _result(numpy.log(x.data), (x,), lambda g: _send(x, g / x.data))


def tanh(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    out = numpy.tanh(x.data)
    return _result(out, (x,), lambda g: _send(x, g * (1.0 - out * out)))


def sigmoid(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    out = scipy.special.expit(x.data)
    return _result(out, (x,), lambda g: _send(x, g * out * (1.0 - out)))


def relu(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    active = x.data > 0
    return _result(
        numpy.where(active, x.data, 0.0), (x,), lambda g: _send(x, g * active)
    )


# maximum_floor clamps from below; entries at or under the floor get no
# gradient.
def maximum_floor(x: ArrayLike, floor: float) -> Tensor:
    x = as_tensor(x)
    active = x.data > floor
    return _result(
        numpy.maximum(x.data, floor), (x,), lambda g: _send(x, g * active)
    )


def masked_fill(x: ArrayLike, mask, value: float) -> Tensor:
    x = as_tensor(x)
    mask = numpy.asarray(mask, dtype=bool)
    out = numpy.where(mask, value, x.data)
    return _result(
        out,
        (x,),
        lambda g: _send(x, _unbroadcast(numpy.where(mask, 0.0, g), x.shape)),
    )


# Normalizations.


def softmax(x: ArrayLike, axis: int = -1, mask=None) -> Tensor:
    """Softmax along ``axis``. ``mask`` (broadcastable, True = keep) removes
    entries from the support; masked entries get exactly zero mass."""
    x = as_tensor(x)
    z = x.data
    if mask is not None:
        z = numpy.where(mask, z, -numpy.inf)
    out = scipy.special.softmax(z, axis=axis)
    assert not numpy.isnan(out).any(), "softmax over an empty support"

    def backward(g):
        _send(x, out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return _result(out, (x,), backward)


def log_softmax(x: ArrayLike, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    out = scipy.special.log_softmax(x.data, axis=axis)
    probs = numpy.exp(out)

    def backward(g):
        _send(x, g - probs * g.sum(axis=axis, keepdims=True))

    return _result(out, (x,), backward)


def layer_norm(
    x: ArrayLike, gain: ArrayLike, bias: ArrayLike, eps: float = 1e-5
) -> Tensor:
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise ShapeMismatch("layer_norm", x.shape, gain.shape)
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / numpy.sqrt(var + eps)
    xhat = centered * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        if gain.requires_grad:
            _send(gain, _unbroadcast(g * xhat, gain.shape))
        if bias.requires_grad:
            _send(bias, _unbroadcast(g, bias.shape))
        if x.requires_grad:
            gx = g * gain.data
            gx = inv * (
                gx
                - gx.mean(axis=-1, keepdims=True)
                - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
            )
            _send(x, gx)

    return _result(out, (x, gain, bias), backward)


def dropout(
    x: ArrayLike,
    rate: float,
    train: bool,
    rng: Optional[numpy.random.Generator] = None,
) -> Tensor:
    """Inverted dropout: kept activations are scaled by 1/(1-rate) in train
    mode; eval mode is the identity."""
    x = as_tensor(x)
    if not train or rate <= 0.0:
        return x
    assert 0.0 < rate < 1.0
    assert rng is not None, "dropout in train mode needs a generator"
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _result(x.data * keep, (x,), lambda g: _send(x, g * keep))


# Indexing, gathers and scatters.


def embedding_lookup(table: ArrayLike, ids) -> Tensor:
    table = as_tensor(table)
    ids = numpy.asarray(ids, dtype=index_ty)
    if table.ndim != 2:
        raise ShapeMismatch("embedding_lookup", table.shape, ids.shape)

    def backward(g):
        gt = numpy.zeros_like(table.data)
        numpy.add.at(gt, ids, g)
        _send(table, gt)

    return _result(table.data[ids], (table,), backward)


def index_select(x: ArrayLike, idx, axis: int) -> Tensor:
    x = as_tensor(x)
    idx = numpy.asarray(idx, dtype=index_ty)
    assert idx.ndim == 1
    axis = axis % x.ndim
    key = (slice(None),) * axis + (idx,)

    def backward(g):
        gx = numpy.zeros_like(x.data)
        numpy.add.at(gx, key, g)
        _send(x, gx)

    return _result(numpy.take(x.data, idx, axis=axis), (x,), backward)


def _segment_starts(indptr: numpy.ndarray, nnz: int) -> numpy.ndarray:
    return numpy.minimum(indptr[:-1], max(nnz - 1, 0))


# segment_sum reduces the stored entries of each CSR row segment along
# ``axis``: out[..., i, ...] = sum of x[..., indptr[i]:indptr[i+1], ...].
def segment_sum(x: ArrayLike, indptr, axis: int) -> Tensor:
    x = as_tensor(x)
    indptr = numpy.asarray(indptr, dtype=index_ty)
    axis = axis % x.ndim
    counts = numpy.diff(indptr)
    nnz = x.shape[axis]
    if indptr[-1] != nnz:
        raise ShapeMismatch("segment_sum", x.shape, indptr.shape)
    moved = numpy.moveaxis(x.data, axis, 0)
    if nnz == 0:
        out = numpy.zeros((counts.shape[0],) + moved.shape[1:], real_ty)
    else:
        out = numpy.add.reduceat(moved, _segment_starts(indptr, nnz), axis=0)
        out[counts == 0] = 0.0
    out = numpy.moveaxis(out, 0, axis)

    def backward(g):
        expanded = numpy.repeat(numpy.moveaxis(g, axis, 0), counts, axis=0)
        _send(x, numpy.moveaxis(expanded, 0, axis))

    return _result(out, (x,), backward)


def edge_softmax(x: ArrayLike, indptr) -> Tensor:
    """Softmax over each CSR row segment of the last axis of ``x``, i.e. the
    attention normalization over a sparse neighbourhood N(i)."""
    x = as_tensor(x)
    indptr = numpy.asarray(indptr, dtype=index_ty)
    counts = numpy.diff(indptr)
    if (counts == 0).any():
        raise EmptyNeighborhood(
            f"row {int(numpy.argmax(counts == 0))} has no neighbours"
        )
    if indptr[-1] != x.shape[-1]:
        raise ShapeMismatch("edge_softmax", x.shape, indptr.shape)
    starts = indptr[:-1]
    peak = numpy.maximum.reduceat(x.data, starts, axis=-1)
    e = numpy.exp(x.data - numpy.repeat(peak, counts, axis=-1))
    total = numpy.add.reduceat(e, starts, axis=-1)
    out = e / numpy.repeat(total, counts, axis=-1)

    def backward(g):
        dot = numpy.add.reduceat(g * out, starts, axis=-1)
        _send(x, out * (g - numpy.repeat(dot, counts, axis=-1)))

    return _result(out, (x,), backward)


def _full_index(idx, lead_shape) -> numpy.ndarray:
    idx = numpy.asarray(idx, dtype=index_ty)
    return numpy.broadcast_to(idx, tuple(lead_shape) + idx.shape[-1:])


def _scatter_add_last(size: int, idx: numpy.ndarray, vals: numpy.ndarray):
    lead = vals.shape[:-1]
    rows = int(numpy.prod(lead)) if lead else 1
    flat = (
        numpy.arange(rows, dtype=index_ty)[:, None] * size
        + idx.reshape(rows, -1)
    )
    out = numpy.bincount(
        flat.ravel(), weights=vals.reshape(rows, -1).ravel(),
        minlength=rows * size,
    )
    return out.reshape(tuple(lead) + (size,))


# take_last gathers along the last axis: out[..., j] = x[..., idx[..., j]],
# with ``idx`` broadcast against the leading axes of ``x``.
def take_last(x: ArrayLike, idx) -> Tensor:
    x = as_tensor(x)
    full = _full_index(idx, x.shape[:-1])
    size = x.shape[-1]

    def backward(g):
        _send(x, _scatter_add_last(size, full, g))

    return _result(
        numpy.take_along_axis(x.data, full, axis=-1), (x,), backward
    )


# scatter_last is the adjoint of take_last: values of x are summed into
# ``size`` bins along the last axis according to ``idx``.
def scatter_last(x: ArrayLike, idx, size: int) -> Tensor:
    x = as_tensor(x)
    full = _full_index(idx, x.shape[:-1])
    if full.shape != x.shape:
        raise ShapeMismatch("scatter_last", x.shape, full.shape)

    def backward(g):
        _send(x, numpy.take_along_axis(g, full, axis=-1))

    return _result(_scatter_add_last(size, full, x.data), (x,), backward)


def cross_entropy(logp: ArrayLike, target, mask=None) -> Tensor:
    """Summed negative log-likelihood of integer ``target`` under the
    log-probabilities ``logp`` (last axis = classes)."""
    logp = as_tensor(logp)
    target = numpy.asarray(target, dtype=index_ty)
    if logp.shape[:-1] != target.shape:
        raise ShapeMismatch("cross_entropy", logp.shape, target.shape)
    weight = (
        numpy.ones(target.shape, real_ty)
        if mask is None
        else numpy.asarray(mask, dtype=real_ty)
    )
    picked = numpy.take_along_axis(logp.data, target[..., None], axis=-1)
    out = -(picked[..., 0] * weight).sum()

    def backward(g):
        gl = numpy.zeros_like(logp.data)
        numpy.put_along_axis(
            gl, target[..., None], (-g * weight)[..., None], axis=-1
        )
        _send(logp, gl)

    return _result(out, (logp,), backward)


def where(cond, a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    cond = numpy.asarray(cond, dtype=bool)
    out = numpy.where(cond, a.data, b.data)

    def backward(g):
        _send(a, _unbroadcast(numpy.where(cond, g, 0.0), a.shape))
        _send(b, _unbroadcast(numpy.where(cond, 0.0, g), b.shape))

    return _result(out, (a, b), backward)
