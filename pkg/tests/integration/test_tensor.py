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

import numpy
import pytest
import scipy.special
from utils.common import seeds

from birgat import tensor as T
from birgat.errors import EmptyNeighborhood, ShapeMismatch
from birgat.gradcheck import grad_check
from birgat.gradsuite import OP_CASES, OP_TOLERANCE, op_cases
from birgat.tensor import Tape, Tensor


def leaf(data):
    return Tensor(numpy.asarray(data, dtype=float), requires_grad=True)


def test_no_tape_records_nothing():
    x = leaf([1.0, 2.0])
    y = T.sum(x * x)
    assert not y.requires_grad
    assert y._backward is None
    assert y.item() == 5.0


def test_backward_square():
    x = leaf([1.0, -2.0, 3.0])
    with Tape() as tape:
        y = T.sum(x * x)
        tape.backward(y)
    assert numpy.array_equal(x.grad, [2.0, -4.0, 6.0])


def test_backward_accumulates_shared_input():
    x = leaf([[1.0, 2.0], [3.0, 4.0]])
    with Tape() as tape:
        y = T.sum(T.matmul(x, x)) + T.sum(x)
        tape.backward(y)
    expected = numpy.ones((2, 2)) @ x.data.T + x.data.T @ numpy.ones((2, 2))
    assert numpy.allclose(x.grad, expected + 1.0)


def test_backward_needs_scalar_root():
    x = leaf([1.0, 2.0])
    with Tape() as tape:
        y = x * 2.0
        with pytest.raises(ShapeMismatch):
            tape.backward(y)


def test_release_drops_graph():
    x = leaf([1.0])
    with Tape() as tape:
        y = T.exp(x)
    tape.release()
    assert len(tape) == 0
    assert y._parents == ()


@pytest.mark.parametrize(
    "a, b",
    [((2, 3), (4, 5)), ((2, 3, 4), (3, 4)), ((3,), (3,))],
)
def test_matmul_shape_mismatch(a, b):
    with pytest.raises(ShapeMismatch):
        T.matmul(numpy.ones(a), numpy.ones(b))


def test_broadcast_mismatch():
    with pytest.raises(ShapeMismatch):
        T.add(numpy.ones((2, 3)), numpy.ones((4,)))


@pytest.mark.parametrize("seed", seeds)
def test_softmax_mask(seed):
    rng = numpy.random.default_rng(seed)
    x = rng.normal(size=(4, 6))
    mask = rng.random((4, 6)) < 0.5
    mask[:, 0] = True
    out = T.softmax(x, mask=mask).numpy()
    assert numpy.allclose(out.sum(axis=-1), 1.0)
    assert (out[~mask] == 0.0).all()
    kept = numpy.where(mask, x, -numpy.inf)
    assert numpy.allclose(out, scipy.special.softmax(kept, axis=-1))


def test_log_softmax_matches_scipy():
    x = numpy.random.default_rng(3).normal(size=(3, 5))
    assert numpy.allclose(
        T.log_softmax(x).numpy(), scipy.special.log_softmax(x, axis=-1)
    )


def test_layer_norm_statistics():
    x = numpy.random.default_rng(4).normal(3.0, 2.0, size=(5, 8))
    out = T.layer_norm(x, numpy.ones(8), numpy.zeros(8)).numpy()
    assert numpy.allclose(out.mean(axis=-1), 0.0)
    assert numpy.allclose(out.var(axis=-1), 1.0, atol=1e-4)


def test_segment_sum_empty_segments():
    x = numpy.arange(10.0).reshape(5, 2)
    out = T.segment_sum(x, numpy.array([0, 0, 3, 3, 5]), axis=0).numpy()
    expected = numpy.array([[0, 0], [6, 9], [0, 0], [14, 16]], dtype=float)
    assert numpy.array_equal(out, expected)


def test_segment_sum_bad_indptr():
    with pytest.raises(ShapeMismatch):
        T.segment_sum(numpy.ones((4, 2)), numpy.array([0, 2, 3]), axis=0)


def test_edge_softmax_rows():
    x = numpy.array([[1.0, 2.0, 0.5, -1.0, 0.0, 3.0]])
    indptr = numpy.array([0, 2, 3, 6])
    out = T.edge_softmax(x, indptr).numpy()[0]
    assert numpy.allclose(out[:2], scipy.special.softmax(x[0, :2]))
    assert out[2] == 1.0
    assert numpy.allclose(out[3:], scipy.special.softmax(x[0, 3:]))


def test_edge_softmax_empty_neighbourhood():
    with pytest.raises(EmptyNeighborhood):
        T.edge_softmax(numpy.ones((1, 3)), numpy.array([0, 2, 2, 3]))


@pytest.mark.parametrize("seed", seeds)
def test_scatter_is_adjoint_of_take(seed):
    rng = numpy.random.default_rng(seed)
    x = rng.normal(size=(3, 7))
    y = rng.normal(size=(3, 5))
    idx = rng.integers(7, size=(3, 5))
    lhs = numpy.vdot(T.take_last(x, idx).numpy(), y)
    rhs = numpy.vdot(x, T.scatter_last(y, idx, 7).numpy())
    assert numpy.isclose(lhs, rhs)


def test_scatter_sums_repeated_indices():
    out = T.scatter_last(
        numpy.array([[0.25, 0.5, 0.25]]), numpy.array([[2, 0, 2]]), 4
    ).numpy()
    assert numpy.array_equal(out, [[0.5, 0.0, 0.5, 0.0]])


def test_dropout_modes():
    x = numpy.ones((50, 40))
    assert numpy.array_equal(T.dropout(x, 0.3, train=False).numpy(), x)
    out = T.dropout(x, 0.25, True, numpy.random.default_rng(0)).numpy()
    assert set(numpy.unique(out)) <= {0.0, 1.0 / 0.75}
    assert 0.15 < (out == 0).mean() < 0.35


def test_cross_entropy_masked():
    logp = numpy.log(numpy.array([[0.5, 0.5], [0.9, 0.1]]))
    out = T.cross_entropy(logp, numpy.array([0, 1]), numpy.array([1, 0]))
    assert numpy.isclose(out.item(), -numpy.log(0.5))


def test_where_routes_gradient():
    a, b = leaf([1.0, 2.0, 3.0]), leaf([4.0])
    with Tape() as tape:
        y = T.sum(T.where(numpy.array([True, False, True]), a, b))
        tape.backward(y)
    assert numpy.array_equal(a.grad, [1.0, 0.0, 1.0])
    assert numpy.array_equal(b.grad, [1.0])


@pytest.mark.parametrize("name", [case[0] for case in OP_CASES])
@pytest.mark.parametrize("seed", seeds)
def test_op_gradients(name, seed):
    cases = {c[0]: c for c in op_cases(numpy.random.default_rng(seed))}
    _, f, params = cases[name]
    assert grad_check(f, params) < OP_TOLERANCE


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main(sys.argv))
