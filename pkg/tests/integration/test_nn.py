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
from utils.common import seeds

from birgat import nn
from birgat.errors import ConfigError, ShapeMismatch
from birgat.tensor import Tensor


def test_param_store_is_seeded():
    a, b = nn.ParamStore(5), nn.ParamStore(5)
    for store in (a, b):
        nn.add_linear(store.scope("x"), 3, 4)
    assert list(a) == ["x.W", "x.b"]
    assert numpy.array_equal(a["x.W"].data, b["x.W"].data)
    assert numpy.array_equal(a["x.b"].data, numpy.zeros(4))
    assert a.num_parameters() == 16


def test_param_store_rejects_duplicates():
    store = nn.ParamStore()
    store.add("w", (2,))
    with pytest.raises(ValueError):
        store.add("w", (2,))


def test_state_dict_round_trip():
    a, b = nn.ParamStore(1), nn.ParamStore(2)
    for store in (a, b):
        nn.add_ffn(store.scope("f"), 4, 8)
    b.load_state_dict(a.state_dict())
    for name, p in a.items():
        assert numpy.array_equal(p.data, b[name].data)
    state = a.state_dict()
    state["f.in.W"][0, 0] += 1.0
    assert a["f.in.W"].data[0, 0] != state["f.in.W"][0, 0]


def test_load_state_dict_mismatch():
    store = nn.ParamStore()
    nn.add_linear(store.scope("x"), 3, 4)
    with pytest.raises(ConfigError):
        store.load_state_dict({"x.W": numpy.zeros((3, 4))})
    with pytest.raises(ShapeMismatch):
        store.load_state_dict(
            {"x.W": numpy.zeros((4, 3)), "x.b": numpy.zeros(4)}
        )


def _attention(seed, m=8, heads=2):
    store = nn.ParamStore(seed)
    nn.add_attention(store.scope("att"), m)
    return store.scope("att")


@pytest.mark.parametrize("seed", seeds)
def test_attention_masks(seed):
    rng = numpy.random.default_rng(seed)
    scope = _attention(seed)
    x = Tensor(rng.normal(size=(2, 5, 8)))
    key_mask = numpy.array([[True] * 5, [True, True, True, False, False]])
    _, w = nn.multihead_attention(x, x, scope, 2, key_mask=key_mask)
    w = w.numpy()
    assert w.shape == (2, 2, 5, 5)
    assert numpy.allclose(w.sum(axis=-1), 1.0)
    assert (w[1, :, :, 3:] == 0.0).all()
    _, w = nn.multihead_attention(x, x, scope, 2, causal=True)
    assert (numpy.triu(w.numpy()[0, 0], k=1) == 0.0).all()


@pytest.mark.parametrize("seed", seeds)
def test_causal_attention_ignores_future(seed):
    rng = numpy.random.default_rng(seed)
    scope = _attention(seed)
    x = rng.normal(size=(1, 6, 8))
    changed = x.copy()
    changed[0, 4:] = rng.normal(size=(2, 8))
    a, _ = nn.multihead_attention(Tensor(x), Tensor(x), scope, 2, causal=True)
    b, _ = nn.multihead_attention(
        Tensor(changed), Tensor(changed), scope, 2, causal=True
    )
    assert numpy.allclose(a.numpy()[0, :4], b.numpy()[0, :4], atol=1e-12)
    assert not numpy.allclose(a.numpy()[0, 4:], b.numpy()[0, 4:])


def test_attention_mask_combines():
    mask = nn.attention_mask(numpy.array([[True, False, True]]), 3, 3, True)
    assert mask.shape == (1, 1, 3, 3)
    assert mask[0, 0].tolist() == [
        [True, False, False],
        [True, False, False],
        [True, False, True],
    ]


def test_lstm_cell_shapes():
    store = nn.ParamStore()
    nn.add_lstm(store.scope("cell"), 3, 4)
    h, c = nn.lstm_cell(
        numpy.ones((2, 3)), numpy.zeros((2, 4)), numpy.zeros((2, 4)),
        store.scope("cell"),
    )
    assert h.shape == c.shape == (2, 4)
    with pytest.raises(ShapeMismatch):
        nn.lstm_cell(
            numpy.ones((2, 5)), numpy.zeros((2, 4)), numpy.zeros((2, 4)),
            store.scope("cell"),
        )


@pytest.mark.parametrize("seed", seeds)
def test_bilstm_ignores_padding(seed):
    rng = numpy.random.default_rng(seed)
    store = nn.ParamStore(seed)
    nn.add_lstm(store.scope("f"), 3, 4)
    nn.add_lstm(store.scope("b"), 3, 4)
    for p in store.values():
        p.data = p.data + rng.normal(0.0, 0.5, size=p.shape)
    seq = rng.normal(size=(1, 3, 3))
    padded = numpy.concatenate([seq, rng.normal(size=(1, 2, 3))], axis=1)
    alone = nn.bilstm(Tensor(seq), [3], store.scope("f"), store.scope("b"))
    batch = numpy.concatenate([padded, rng.normal(size=(1, 5, 3))], axis=0)
    both = nn.bilstm(
        Tensor(batch), [3, 5], store.scope("f"), store.scope("b")
    )
    assert both.shape == (2, 8)
    assert numpy.allclose(alone.numpy()[0], both.numpy()[0], atol=1e-12)


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main(sys.argv))
