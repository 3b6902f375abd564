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
from dataclasses import asdict, dataclass
from typing import NamedTuple, Optional, Sequence

import numpy

from . import nn, tensor as T
from .errors import ConfigError, ShapeMismatch
from .nn import Mode, ParamStore, Scope
from .tensor import Tensor
from .types import index_ty, real_ty

PROB_FLOOR = 1e-12
NO_COPY_GATE = (1.0, 0.0, 0.0)


@dataclass(frozen=True)
class DecoderConfig:
    copy: bool = True
    max_len: int = 96
    beam: int = 5

    def __post_init__(self):
        if self.max_len < 2:
            raise ConfigError("max_len must be at least 2")
        if self.beam < 1:
            raise ConfigError("beam must be at least 1")

    def to_dict(self) -> dict:
        return asdict(self)


class OutputSpace(NamedTuple):
    """Layout of the extended output ids of one batch.

    [0, vocab) are vocabulary words and sentinels, [vocab, vocab + max_oov)
    are question words missing from the vocabulary (numbered per sample in
    order of first occurrence), and the last ``items`` ids are ontology
    items.
    """

    vocab: int
    max_oov: int
    items: int

    @property
    def size(self) -> int:
        return self.vocab + self.max_oov + self.items

    @property
    def item_offset(self) -> int:
        return self.vocab + self.max_oov

    def item(self, item_id: int) -> int:
        return self.item_offset + item_id


class Mixture(NamedTuple):
    final: Tensor  # (B, T, space.size)
    gate: Tensor  # (B, T, 3)
    p_gen: Tensor  # (B, T, vocab)
    ptr_question: Tensor  # (B, T, n)
    p_copy: Tensor  # (B, T, vocab + max_oov)
    p_select: Tensor  # (B, T, items)


class PointerGeneratorDecoder:
    """Single-layer transformer decoder over the memory [Q; O] whose
    output distribution mixes, through a three-way gate, generation from
    the vocabulary, copying of question words and selection of ontology
    items."""

    def __init__(
        self,
        config: DecoderConfig,
        store: ParamStore,
        m: int,
        heads: int,
        vocab_size: int,
        n_items: int,
        dropout: float = 0.0,
        ffn_mult: int = 4,
    ):
        self.config = config
        self.store = store
        self.m = m
        self.heads = heads
        self.vocab_size = vocab_size
        self.n_items = n_items
        self.dropout = dropout
        if "embed.word" not in store:
            store.add("embed.word", (vocab_size, m))
        s = self.scope = store.scope("dec")
        s.add("pos", (config.max_len + 1, m))
        nn.add_linear(s.scope("ont_in"), m, m)
        nn.add_attention(s.scope("self"), m)
        nn.add_norm(s.scope("self_norm"), m)
        nn.add_attention(s.scope("cross"), m)
        nn.add_norm(s.scope("cross_norm"), m)
        nn.add_ffn(s.scope("ffn"), m, ffn_mult * m)
        nn.add_norm(s.scope("ffn_norm"), m)
        s.add("W_g", (m, 3))
        s.add("W_gen", (m, m))
        for ptr in ("ptr_q", "ptr_o"):
            s.scope(ptr).add("W_q", (m, m))
            s.scope(ptr).add("W_k", (m, m))

    @property
    def word_embedding(self) -> Tensor:
        return self.store["embed.word"]

    def mode(self, train: bool, rng=None) -> Mode:
        return Mode(train=train, rate=self.dropout, rng=rng)

    def space(self, max_oov: int) -> OutputSpace:
        return OutputSpace(self.vocab_size, max_oov, self.n_items)

    def embed_output_tokens(
        self,
        ids,
        o: Tensor,
        space: OutputSpace,
        mode: Mode = nn.EVAL,
        unk_id: int = 3,
    ) -> Tensor:
        """Decoder inputs for extended ids (B, T): vocabulary tokens use
        the shared word embedding, copied out-of-vocabulary words the UNK
        row, and ontology items their projected memory rows; the learned
        position of each step is added."""
        ids = numpy.asarray(ids, dtype=index_ty)
        b, steps = ids.shape
        if steps > self.scope["pos"].shape[0]:
            raise ShapeMismatch(
                "decoder positions", ids.shape, self.scope["pos"].shape
            )
        is_item = ids >= space.item_offset
        word_ids = numpy.where(ids < space.vocab, ids, unk_id)
        words = T.embedding_lookup(self.word_embedding, word_ids)
        if is_item.any():
            words = T.masked_fill(words, is_item[..., None], 0.0)
            onehot = numpy.zeros((b, steps, space.items), dtype=real_ty)
            bi, ti = numpy.nonzero(is_item)
            onehot[bi, ti, ids[bi, ti] - space.item_offset] = 1.0
            items = nn.linear(o, self.scope.scope("ont_in"))
            words = words + T.matmul(onehot, items)
        pos = T.slice_axis(self.scope["pos"], 0, steps, axis=0)
        return mode.drop(words + pos)

    def decoder_states(
        self,
        x: Tensor,
        memory: Tensor,
        memory_mask=None,
        mode: Mode = nn.EVAL,
    ) -> Tensor:
        """One decoder layer: causal self-attention, cross-attention over
        the memory, feedforward, each a post-norm residual sub-layer.
        Row t of the result is s_t."""
        s = self.scope
        sub, _ = nn.multihead_attention(
            x, x, s.scope("self"), self.heads, mode, causal=True
        )
        x = nn.residual_norm(x, sub, s.scope("self_norm"), mode)
        sub, _ = nn.multihead_attention(
            x,
            memory,
            s.scope("cross"),
            self.heads,
            mode,
            key_mask=memory_mask,
        )
        x = nn.residual_norm(x, sub, s.scope("cross_norm"), mode)
        return nn.residual_norm(
            x, nn.ffn(x, s.scope("ffn")), s.scope("ffn_norm"), mode
        )

    def pointer(
        self, states: Tensor, memory: Tensor, scope: Scope, key_mask=None
    ) -> Tensor:
        """Head-averaged attention weights of ``states`` over ``memory``."""
        q = nn.split_heads(T.matmul(states, scope["W_q"]), self.heads)
        k = nn.split_heads(T.matmul(memory, scope["W_k"]), self.heads)
        scores = T.scale(
            T.matmul(q, k.T), 1.0 / math.sqrt(self.m // self.heads)
        )
        weights = T.softmax(
            scores,
            axis=-1,
            mask=nn.attention_mask(key_mask, states.shape[1], memory.shape[1]),
        )
        return T.mean(weights, axis=1)

    def mixture(
        self,
        states: Tensor,
        q: Tensor,
        o: Tensor,
        source_ext,
        space: OutputSpace,
        question_mask=None,
        force_gate: Optional[Sequence[float]] = None,
    ) -> Mixture:
        """The final distribution over the extended output space.

        g = softmax(s W_g); P_gen = softmax(s W_gen phi^T); P_copy sums the
        question pointer over positions holding the same word; P_select is
        the ontology pointer. Vocabulary ids get g1 P_gen + g2 P_copy and
        ontology items g3 P_select. ``force_gate`` replaces g with a fixed
        simplex point.
        """
        b, steps, _ = states.shape
        if force_gate is None and not self.config.copy:
            force_gate = NO_COPY_GATE
        if force_gate is None:
            gate = T.softmax(T.matmul(states, self.scope["W_g"]), axis=-1)
        else:
            fixed = numpy.asarray(force_gate, dtype=real_ty)
            assert fixed.shape == (3,) and abs(fixed.sum() - 1.0) < 1e-12
            gate = T.Tensor(numpy.broadcast_to(fixed, (b, steps, 3)).copy())
        logits = T.matmul(
            T.matmul(states, self.scope["W_gen"]), self.word_embedding.T
        )
        p_gen = T.softmax(logits, axis=-1)
        ptr_q = self.pointer(
            states, q, self.scope.scope("ptr_q"), question_mask
        )
        p_select = self.pointer(states, o, self.scope.scope("ptr_o"))
        source_ext = numpy.asarray(source_ext, dtype=index_ty)
        p_copy = T.scatter_last(
            ptr_q, source_ext[:, None, :], space.vocab + space.max_oov
        )
        if space.max_oov:
            pad = T.Tensor(numpy.zeros((b, steps, space.max_oov), real_ty))
            p_gen_ext = T.concat([p_gen, pad], axis=-1)
        else:
            p_gen_ext = p_gen
        words = (
            T.slice_axis(gate, 0, 1, axis=-1) * p_gen_ext
            + T.slice_axis(gate, 1, 2, axis=-1) * p_copy
        )
        items = T.slice_axis(gate, 2, 3, axis=-1) * p_select
        final = T.concat([words, items], axis=-1)
        return Mixture(final, gate, p_gen, ptr_q, p_copy, p_select)

    def forward(
        self,
        tgt_in,
        q: Tensor,
        o: Tensor,
        source_ext,
        space: OutputSpace,
        question_mask=None,
        mode: Mode = nn.EVAL,
        force_gate=None,
    ) -> Mixture:
        b = q.shape[0]
        memory = T.concat([q, o], axis=1)
        memory_mask = None
        if question_mask is not None:
            memory_mask = numpy.concatenate(
                [
                    numpy.asarray(question_mask, dtype=bool),
                    numpy.ones((b, o.shape[1]), dtype=bool),
                ],
                axis=1,
            )
        x = self.embed_output_tokens(tgt_in, o, space, mode)
        states = self.decoder_states(x, memory, memory_mask, mode)
        return self.mixture(
            states, q, o, source_ext, space, question_mask, force_gate
        )

    def sequence_loss(
        self,
        tgt_in,
        tgt_out,
        tgt_mask,
        q: Tensor,
        o: Tensor,
        source_ext,
        space: OutputSpace,
        question_mask=None,
        mode: Mode = nn.EVAL,
        force_gate=None,
    ) -> Tensor:
        """Teacher-forced -sum_t log P(y_t | y_<t, Q, O), probabilities
        floored at 1e-12, averaged over the batch."""
        tgt_out = numpy.asarray(tgt_out, dtype=index_ty)
        mix = self.forward(
            tgt_in, q, o, source_ext, space, question_mask, mode, force_gate
        )
        picked = T.take_last(mix.final, tgt_out[..., None])
        logp = T.log(T.maximum_floor(picked, PROB_FLOOR))
        weight = numpy.asarray(tgt_mask, dtype=real_ty)[..., None]
        return T.scale(T.sum(logp * weight), -1.0 / tgt_out.shape[0])

    def step_logprobs(
        self,
        prefixes: Sequence[Sequence[int]],
        q: Tensor,
        o: Tensor,
        source_ext,
        space: OutputSpace,
        question_mask=None,
    ) -> numpy.ndarray:
        """Log-probabilities of the next token for equal-length prefixes
        decoded against one sample's memories (q, o of batch size 1)."""
        ids = numpy.asarray(prefixes, dtype=index_ty)
        k = ids.shape[0]
        qk = T.expand(q, (k,) + q.shape[1:])
        ok = T.expand(o, (k,) + o.shape[1:])
        src = numpy.broadcast_to(
            numpy.asarray(source_ext), (k,) + q.shape[1:2]
        )
        mask = None
        if question_mask is not None:
            mask = numpy.broadcast_to(
                numpy.asarray(question_mask, dtype=bool), (k, q.shape[1])
            )
        mix = self.forward(ids, qk, ok, src, space, mask)
        last = mix.final.data[:, -1, :]
        with numpy.errstate(divide="ignore"):
            return numpy.log(last)
