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

from dataclasses import replace

import numpy as np
import pytest
from utils.common import small_ontology_doc, tiny_decoder, tiny_encoder

from birgat.corpus import make_sample
from birgat.decoder import DecoderConfig, OutputSpace
from birgat.errors import ConfigError, GoldContainsUnknownOntologyItem
from birgat.frames import (
    DomainNode,
    IntentNode,
    OntologyRef,
    SemanticFrame,
    SlotPair,
    Word,
    linearize,
)
from birgat.model import (
    MAX_LEN_HEADROOM,
    BiRGATModel,
    fit_decoder_config,
    target_length,
)
from birgat.ontology import load_ontology
from birgat.vocab import build_vocab


def navigate(value):
    return SemanticFrame(
        [DomainNode(0, [IntentNode(1, [SlotPair(2, tuple(value.split()))])])]
    )


def play(song):
    return SemanticFrame(
        [
            DomainNode(
                6,
                [
                    IntentNode(7, [SlotPair(8, tuple(song.split()))]),
                    IntentNode(10),
                ],
            )
        ]
    )


@pytest.fixture(scope="module")
def ont():
    return load_ontology(small_ontology_doc)


@pytest.fixture(scope="module")
def vocab(ont):
    samples = [
        make_sample("take me home".split(), navigate("home")),
        make_sample("play hey jude then skip".split(), play("hey jude")),
    ]
    return build_vocab(samples, ont)


def make_model(ont, vocab, seed=0, **decoder):
    return BiRGATModel(
        ont, vocab, tiny_encoder, replace(tiny_decoder, **decoder), seed
    )


@pytest.fixture(scope="module")
def model(ont, vocab):
    return make_model(ont, vocab)


@pytest.fixture(scope="module")
def batch(model):
    return model.make_batch(
        [
            "take me to zzz".split(),
            "play qqq qqq then skip".split(),
        ],
        [navigate("zzz"), play("qqq qqq")],
    )


def run(model, batch, tgt_in=None, force_gate=None):
    q, o = model.encode(batch)
    return model.decoder.forward(
        batch.tgt_in if tgt_in is None else tgt_in,
        q,
        o,
        batch.src_ext,
        model.space(batch.max_oov),
        batch.src_mask,
        force_gate=force_gate,
    )


def test_output_space():
    space = OutputSpace(vocab=20, max_oov=3, items=11)
    assert space.size == 34
    assert space.item_offset == 23
    assert space.item(4) == 27


def test_batch_layout(model, vocab, batch):
    assert batch.oovs == [["to", "zzz"], ["qqq"]]
    assert batch.max_oov == 2
    v = len(vocab)
    assert list(batch.src_ext[0]) == [
        vocab.lookup("take"),
        vocab.lookup("me"),
        v,
        v + 1,
        vocab.pad_id,
    ]
    assert list(batch.src_ext[1, 1:3]) == [v, v]
    assert batch.src_mask.sum(axis=1).tolist() == [4, 5]
    assert np.all(batch.tgt_in[:, 0] == vocab.bos_id)
    for k in range(len(batch)):
        n = int(batch.tgt_mask[k].sum())
        assert np.array_equal(batch.tgt_in[k, 1:n], batch.tgt_out[k, : n - 1])
        assert batch.tgt_out[k, n - 1] == vocab.eos_id
        assert np.all(batch.tgt_out[k, n:] == vocab.pad_id)
    space = model.space(batch.max_oov)
    assert space.item(2) in batch.tgt_out[0]
    assert v + 1 in batch.tgt_out[0]
    assert batch.tgt_out[1].tolist().count(v) == 2


def test_no_copy_targets_are_spelled(ont, vocab):
    model = make_model(ont, vocab, copy=False)
    batch = model.make_batch(["take me to zzz".split()], [navigate("zzz")])
    ids = batch.tgt_out[0][batch.tgt_mask[0]]
    assert np.all(ids < len(vocab))
    assert vocab.unk_id in ids
    assert vocab.lookup("destination") in ids


def test_target_longer_than_max_len(ont, vocab):
    model = make_model(ont, vocab, max_len=8)
    with pytest.raises(ConfigError):
        model.make_batch(["play"], [play("hey jude")])


def test_fit_decoder_config(ont):
    samples = [
        make_sample("take me home".split(), navigate("home")),
        make_sample("play hey jude then skip".split(), play("hey jude")),
    ]
    longest = target_length(play("hey jude"), ont)
    assert longest == len(linearize(play("hey jude"), ont)) + 1
    spelled = target_length(play("hey jude"), ont, spelled=True)
    assert spelled > longest

    short = DecoderConfig(max_len=4)
    fitted = fit_decoder_config(short, samples, ont)
    assert fitted.max_len == longest + MAX_LEN_HEADROOM
    assert (fitted.copy, fitted.beam) == (short.copy, short.beam)
    assert fit_decoder_config(short, samples, ont, headroom=0).max_len == (
        longest
    )
    no_copy = DecoderConfig(copy=False, max_len=4)
    assert fit_decoder_config(no_copy, samples, ont).max_len == (
        spelled + MAX_LEN_HEADROOM
    )
    roomy = DecoderConfig(max_len=500)
    assert fit_decoder_config(roomy, samples, ont) is roomy
    assert fit_decoder_config(short, [], ont) is short


def test_fitted_max_len_accepts_long_targets(ont, vocab):
    sample = make_sample("play".split(), play("hey jude"))
    config = replace(tiny_decoder, max_len=8)
    config = fit_decoder_config(config, [sample], ont)
    model = make_model(ont, vocab, max_len=config.max_len)
    assert model.fits(sample)
    batch = model.make_batch([sample.utterance], [sample.frame])
    assert batch.tgt_mask[0].sum() == target_length(sample.frame, ont)
    assert not make_model(ont, vocab, max_len=8).fits(sample)


def test_unknown_ontology_item(model):
    with pytest.raises(GoldContainsUnknownOntologyItem):
        model.target_ids([OntologyRef(999)], [], model.space(0))


def test_target_ids_invert(model, ont):
    toks = linearize(play("qqq jude"), ont)
    space = model.space(1)
    ids = model.target_ids(toks, ["qqq"], space)
    assert model.output_tokens(ids, ["qqq"], space) == toks
    assert Word("qqq") in toks


def test_mixture_is_a_distribution(model, batch):
    mix = run(model, batch)
    space = model.space(batch.max_oov)
    assert mix.final.shape == batch.tgt_in.shape + (space.size,)
    assert np.allclose(mix.final.data.sum(axis=-1), 1.0, rtol=0, atol=1e-12)
    assert np.allclose(mix.gate.data.sum(axis=-1), 1.0, rtol=0, atol=1e-12)
    assert np.all(mix.final.data >= 0.0)


def test_copy_sums_repeated_positions(model, batch):
    mix = run(model, batch)
    ptr = mix.ptr_question.data
    v = len(model.vocab)
    assert np.all(ptr[0, :, 4] == 0.0)
    assert np.allclose(mix.p_copy.data[1, :, v], ptr[1, :, 1] + ptr[1, :, 2])
    assert np.allclose(mix.p_copy.data[0, :, v + 1], ptr[0, :, 3])
    assert np.allclose(mix.p_copy.data[1, :, v + 1], 0.0)


@pytest.mark.parametrize("which", [0, 1, 2])
def test_forced_gate(model, batch, which):
    gate = [0.0, 0.0, 0.0]
    gate[which] = 1.0
    mix = run(model, batch, force_gate=gate)
    space = model.space(batch.max_oov)
    final = mix.final.data
    v, offset = space.vocab, space.item_offset
    if which == 0:
        assert np.allclose(final[..., :v], mix.p_gen.data)
        assert np.all(final[..., v:] == 0.0)
    elif which == 1:
        assert np.allclose(final[..., :offset], mix.p_copy.data)
        assert np.all(final[..., offset:] == 0.0)
    else:
        assert np.all(final[..., :offset] == 0.0)
        assert np.allclose(final[..., offset:], mix.p_select.data)


def test_no_copy_model_gate(ont, vocab):
    model = make_model(ont, vocab, copy=False)
    batch = model.make_batch(["take me home".split()], [navigate("home")])
    mix = run(model, batch)
    assert np.all(mix.gate.data == np.array([1.0, 0.0, 0.0]))
    assert np.all(mix.final.data[..., len(vocab) :] == 0.0)


def test_decoder_is_causal(model, batch):
    before = run(model, batch).final.data
    changed = batch.tgt_in.copy()
    changed[:, 3:] = model.vocab.lookup("home")
    after = run(model, batch, tgt_in=changed).final.data
    assert np.allclose(before[:, :3], after[:, :3], rtol=0, atol=1e-12)
    assert not np.allclose(before[:, 3:], after[:, 3:])


def test_sequence_loss(model, batch):
    loss = model.loss(batch)
    final = run(model, batch).final.data
    picked = np.take_along_axis(final, batch.tgt_out[..., None], axis=-1)
    logp = np.log(np.maximum(picked[..., 0], 1e-12)) * batch.tgt_mask
    expected = -logp.sum() / len(batch)
    assert loss.item() >= 0.0
    assert np.isclose(loss.item(), expected, rtol=1e-12, atol=0)


def test_step_logprobs(model, batch):
    utterance = "play qqq qqq then skip".split()
    score, oovs, space = model.score_fn(utterance)
    assert oovs == ["qqq"]
    prefixes = [[model.vocab.bos_id, 4], [model.vocab.bos_id, 5]]
    logp = score(prefixes)
    assert logp.shape == (2, space.size)
    assert np.allclose(np.exp(logp).sum(axis=-1), 1.0)
    single = model.make_batch([utterance])
    q, o = model.encode(single)
    mix = model.decoder.forward(
        np.array(prefixes[1:]), q, o, single.src_ext, space, single.src_mask
    )
    with np.errstate(divide="ignore"):
        expected = np.log(mix.final.data[0, -1])
    assert np.allclose(logp[1], expected, rtol=0, atol=1e-12)


def test_item_embeddings_use_memory_rows(model, batch):
    q, o = model.encode(batch)
    space = model.space(batch.max_oov)
    dec = model.decoder
    ids = np.array([[space.item(3), space.item(7)]] * 2)
    x = dec.embed_output_tokens(ids, o, space).data
    proj = o.data @ dec.scope.scope("ont_in")["W"].data
    proj = proj + dec.scope.scope("ont_in")["b"].data
    pos = dec.scope["pos"].data
    assert np.allclose(x[:, 0], proj[:, 3] + pos[0])
    assert np.allclose(x[:, 1], proj[:, 7] + pos[1])


@pytest.mark.parametrize("overrides", [{"max_len": 1}, {"beam": 0}])
def test_bad_decoder_config(overrides):
    with pytest.raises(ConfigError):
        DecoderConfig(**overrides)


def test_predict_status(model):
    prediction = model.predict("take me home".split(), beam=2, max_len=6)
    assert prediction.status in ("ok", "parse-error", "unfinished")
    assert prediction.ok == (prediction.frame is not None)
    assert prediction.logprob <= 0.0


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main(sys.argv))
