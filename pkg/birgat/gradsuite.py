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
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Tuple

import numpy

from . import nn, tensor as T
from .corpus import make_sample
from .decoder import DecoderConfig, PointerGeneratorDecoder
from .encoder import BiRGATEncoder, EncoderConfig, prepare_ontology
from .frames import DomainNode, IntentNode, SemanticFrame, SlotPair
from .gradcheck import grad_check_report
from .model import BiRGATModel
from .ontology import ItemKind, Ontology, load_ontology
from .tensor import Tensor
from .vocab import build_vocab

log = logging.getLogger(__name__)

OP_TOLERANCE = 1e-6
MODULE_TOLERANCE = 1e-4
MODULE_ENTRIES = 12

MICRO_ONTOLOGY = {
    "domains": [
        {
            "name": "vehicle",
            "intents": [
                {
                    "name": "open window",
                    "slots": [{"name": "position"}, {"name": "degree"}],
                },
                {"name": "play music", "slots": [{"name": "song"}]},
            ],
        }
    ]
}
MICRO_QUESTION = ("open", "front", "window", "please")
MICRO_ENCODER = EncoderConfig(
    m=8, layers=1, heads=2, dropout=0.0, ffn_mult=2, distance_clip=2
)


@dataclass(frozen=True)
class CheckResult:
    name: str
    group: str
    error: float
    tolerance: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.error < self.tolerance


def micro_ontology() -> Ontology:
    return load_ontology(MICRO_ONTOLOGY)


def micro_frame(ont: Ontology) -> SemanticFrame:
    domain = ont.domain_by_name("vehicle")
    intent = ont.lookup(ItemKind.INTENT, ("open", "window"), domain)
    slot = ont.lookup(ItemKind.SLOT, ("position",), intent)
    node = IntentNode(intent, [SlotPair(slot, ["front"])])
    return SemanticFrame([DomainNode(domain, [node])])


# Inputs of an op case: shape, optionally a uniform range and a kink the
# entries must stay away from.
def _spec(shape, low=None, high=None, away=None) -> dict:
    return {"shape": shape, "low": low, "high": high, "away": away}


_MASK = numpy.array([[True, False, True, True]] * 3)
_IDS = numpy.array([[0, 2, 2], [1, 0, 3]])
_GATHER = numpy.array([[0, 3, 3], [2, 1, 0]])
_COND = numpy.array([[True, False, True], [False, False, True]])

OP_CASES: Tuple[Tuple[str, Tuple[dict, ...], Callable[..., Tensor]], ...] = (
    ("add", (_spec((3, 4)), _spec((4,))), T.add),
    ("sub", (_spec((3, 4)), _spec((3, 1))), T.sub),
    ("mul", (_spec((3, 4)), _spec((3, 1))), T.mul),
    ("div", (_spec((3, 4)), _spec((3, 4), 0.5, 2.0)), T.div),
    ("matmul", (_spec((2, 3, 4)), _spec((4, 5))), T.matmul),
    ("transpose", (_spec((2, 3, 4)),), lambda a: T.transpose(a, (2, 0, 1))),
    ("reshape", (_spec((2, 3, 4)),), lambda a: T.reshape(a, (6, 4))),
    ("expand", (_spec((2, 4)),), lambda a: T.expand(a, (3, 2, 4))),
    (
        "concat",
        (_spec((2, 3)), _spec((2, 2))),
        lambda a, b: T.concat([a, b], axis=1),
    ),
    ("slice", (_spec((2, 4)),), lambda a: T.slice_axis(a, 1, 3, axis=-1)),
    ("sum", (_spec((3, 4)),), lambda a: T.sum(a, axis=1)),
    ("mean", (_spec((3, 4)),), lambda a: T.mean(a, axis=0, keepdims=True)),
    ("exp", (_spec((3, 4)),), T.exp),
    ("log", (_spec((3, 4), 0.5, 2.0),), T.log),
    ("tanh", (_spec((3, 4)),), T.tanh),
    ("sigmoid", (_spec((3, 4)),), T.sigmoid),
    ("relu", (_spec((3, 4), away=0.0),), T.relu),
    (
        "maximum_floor",
        (_spec((3, 4), away=0.3),),
        lambda a: T.maximum_floor(a, 0.3),
    ),
    ("masked_fill", (_spec((3, 4)),), lambda a: T.masked_fill(a, ~_MASK, 0)),
    ("softmax", (_spec((3, 4)),), lambda a: T.softmax(a, mask=_MASK)),
    ("log_softmax", (_spec((3, 4)),), T.log_softmax),
    ("layer_norm", (_spec((3, 5)), _spec((5,)), _spec((5,))), T.layer_norm),
    (
        "embedding_lookup",
        (_spec((4, 3)),),
        lambda t: T.embedding_lookup(t, _IDS),
    ),
    (
        "index_select",
        (_spec((2, 3, 2)),),
        lambda a: T.index_select(a, numpy.array([2, 0, 2]), axis=1),
    ),
    (
        "segment_sum",
        (_spec((2, 5, 3)),),
        lambda a: T.segment_sum(a, numpy.array([0, 2, 2, 5]), axis=1),
    ),
    (
        "edge_softmax",
        (_spec((2, 6)),),
        lambda a: T.edge_softmax(a, numpy.array([0, 2, 3, 6])),
    ),
    ("take_last", (_spec((2, 4)),), lambda a: T.take_last(a, _GATHER)),
    (
        "scatter_last",
        (_spec((2, 3)),),
        lambda a: T.scatter_last(a, _GATHER, 5),
    ),
    (
        "where",
        (_spec((2, 3)), _spec((1, 3))),
        lambda a, b: T.where(_COND, a, b),
    ),
    (
        "cross_entropy",
        (_spec((3, 4)),),
        lambda a: T.cross_entropy(
            T.log_softmax(a), numpy.array([1, 0, 2]), numpy.array([1, 0, 1])
        ),
    ),
)


def _random_input(rng, name: str, spec: dict) -> Tensor:
    if spec["low"] is not None:
        data = rng.uniform(spec["low"], spec["high"], size=spec["shape"])
    else:
        data = rng.normal(size=spec["shape"])
    if spec["away"] is not None:
        near = numpy.abs(data - spec["away"]) < 0.1
        data = numpy.where(near, data + 0.25, data)
    return Tensor(data, requires_grad=True, name=name)


# _projected turns a tensor-valued function into the scalar <f(), w> for a
# fixed random w drawn on the first call.
def _projected(rng, out: Callable[[], Tensor]) -> Callable[[], Tensor]:
    weights = {}

    def f():
        y = out()
        if "w" not in weights:
            weights["w"] = rng.normal(size=y.shape)
        return T.sum(y * weights["w"])

    return f


def op_cases(rng) -> List[Tuple[str, Callable[[], Tensor], Dict]]:
    cases = []
    for name, specs, op in OP_CASES:
        args = [
            _random_input(rng, f"arg{k}", spec) for k, spec in enumerate(specs)
        ]
        params = {a.name: a for a in args}
        f = _projected(rng, lambda op=op, args=args: op(*args))
        cases.append((name, f, params))
    return cases


def _perturb(store: nn.ParamStore, rng, scale: float = 0.1) -> None:
    for p in store.values():
        p.data = p.data + rng.normal(0.0, scale, size=p.shape)


def _trainable(rng, name: str, shape) -> Tensor:
    return Tensor(rng.normal(size=shape), requires_grad=True, name=name)


def _store(rng) -> nn.ParamStore:
    return nn.ParamStore(int(rng.integers(1 << 31)))


def module_cases(rng) -> List[Tuple[str, Callable[[], Tensor], Dict]]:
    cases = []
    m = MICRO_ENCODER.m

    store = _store(rng)
    cell = store.scope("cell")
    nn.add_lstm(cell, 3, 4)
    _perturb(store, rng, 0.5)
    x, h, c = (_trainable(rng, n, s) for n, s in
               (("x", (2, 3)), ("h", (2, 4)), ("c", (2, 4))))

    def lstm_step():
        return T.concat(list(nn.lstm_cell(x, h, c, cell)), axis=-1)

    params = dict(store.items(), x=x, h=h, c=c)
    cases.append(("lstm_cell", _projected(rng, lstm_step), params))

    store = _store(rng)
    nn.add_lstm(store.scope("fwd"), 3, 2)
    nn.add_lstm(store.scope("bwd"), 3, 2)
    _perturb(store, rng, 0.5)
    seq = _trainable(rng, "seq", (3, 4, 3))
    lengths = numpy.array([4, 2, 1])

    def read():
        return nn.bilstm(seq, lengths, store.scope("fwd"), store.scope("bwd"))

    params = dict(store.items(), seq=seq)
    cases.append(("bilstm", _projected(rng, read), params))

    ont = micro_ontology()
    sample = make_sample(MICRO_QUESTION, micro_frame(ont))
    # The slot value is kept out of the vocabulary so the full model
    # has to copy it through an extended id.
    vocab = build_vocab([sample], ont, exclude=("front",))
    inputs = prepare_ontology(ont, vocab)

    store = _store(rng)
    enc = BiRGATEncoder(MICRO_ENCODER, store, len(vocab), len(ont))
    _perturb(store, rng)
    q0 = _trainable(rng, "q0", (2, 4, m))
    o0 = _trainable(rng, "o0", (2, len(ont), m))
    key_mask = numpy.array([[True] * 4, [True, True, True, False]])

    def layer():
        q, o = enc.birgat_layer(0, q0, o0, inputs, key_mask)
        return T.concat([q, o], axis=1)

    layer_params = {
        k: v
        for k, v in store.items()
        if k.startswith(("enc.layer0.", "enc.rel."))
    }
    params = dict(layer_params, q0=q0, o0=o0)
    cases.append(("birgat_layer", _projected(rng, layer), params))

    store = _store(rng)
    dec = PointerGeneratorDecoder(
        DecoderConfig(max_len=12),
        store,
        m=m,
        heads=MICRO_ENCODER.heads,
        vocab_size=len(vocab),
        n_items=len(ont),
        ffn_mult=MICRO_ENCODER.ffn_mult,
    )
    _perturb(store, rng)
    q = _trainable(rng, "q", (1, 4, m))
    o = _trainable(rng, "o", (1, len(ont), m))
    space = dec.space(1)
    opened, window = vocab.lookup("open"), vocab.lookup("window")
    oov = space.vocab
    src = numpy.array([[opened, oov, window, opened]])
    tgt_in = numpy.array([[vocab.bos_id, space.item(1), oov]])
    tgt_out = numpy.array([[space.item(1), oov, opened]])
    tgt_mask = numpy.ones((1, 3), dtype=bool)

    def step_loss():
        return dec.sequence_loss(tgt_in, tgt_out, tgt_mask, q, o, src, space)

    cases.append(("decoder_step", step_loss, dict(store.items(), q=q, o=o)))

    model = BiRGATModel(
        ont,
        vocab,
        MICRO_ENCODER,
        DecoderConfig(max_len=16),
        seed=int(rng.integers(1 << 31)),
    )
    _perturb(model.store, rng)
    batch = model.batch_of([sample])
    cases.append(("full_model", lambda: model.loss(batch), model.store))
    return cases


def run_gradient_suite(seed: int = 0) -> List[CheckResult]:
    """Central-difference checks of every differentiable op (all entries)
    and of the composite modules up to the full model (a seeded sample of
    entries per tensor)."""
    rng = numpy.random.default_rng(seed)
    results = []
    groups = (
        ("op", op_cases(rng), OP_TOLERANCE, None),
        ("module", module_cases(rng), MODULE_TOLERANCE, MODULE_ENTRIES),
    )
    for group, cases, tolerance, entries in groups:
        for name, f, params in cases:
            start = time.perf_counter()
            report = grad_check_report(
                f, params, max_entries=entries, seed=seed
            )
            error = max(report.values(), default=0.0)
            results.append(
                CheckResult(
                    name, group, error, tolerance, time.perf_counter() - start
                )
            )
            log.debug("%s %s: %.3e", group, name, error)
    return results


def format_results(results: List[CheckResult]) -> str:
    rows = [f"{'check':<18} {'group':<7} {'max rel err':>12} {'status':>6}"]
    for r in results:
        rows.append(
            f"{r.name:<18} {r.group:<7} {r.error:>12.3e} "
            f"{'ok' if r.passed else 'FAIL':>6}"
        )
    return "\n".join(rows)
