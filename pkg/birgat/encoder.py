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
import warnings
from dataclasses import asdict, dataclass
from typing import Optional, Tuple

import numpy

from . import nn, tensor as T
from .errors import ConfigError
from .nn import Mode, ParamStore, Scope
from .ontology import (
    NUM_RELATIONS,
    Ontology,
    RelationTable,
    build_domain_block_table,
    build_relation_table,
)
from .tensor import Tensor
from .types import index_ty
from .utils import find_last_user_stacklevel
from .vocab import Vocab

GNN_MODES = ("none", "gat", "rgat")


@dataclass(frozen=True)
class EncoderConfig:
    m: int = 256
    layers: int = 2
    heads: int = 8
    dropout: float = 0.2
    ffn_mult: int = 4
    distance_clip: int = 8
    gnn: str = "rgat"
    dca: bool = True
    oe: bool = True
    use_descriptions: bool = False

    def __post_init__(self):
        if self.m <= 0 or self.heads <= 0:
            raise ConfigError("m and heads must be positive")
        if self.m % self.heads or self.m % 2:
            raise ConfigError(
                f"m={self.m} must be divisible by heads={self.heads} and 2"
            )
        if self.layers < 1:
            raise ConfigError("the encoder needs at least one layer")
        if self.distance_clip < 1:
            raise ConfigError("distance_clip must be at least 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout {self.dropout} outside [0, 1)")
        if self.ffn_mult < 1:
            raise ConfigError("ffn_mult must be at least 1")
        if self.gnn not in GNN_MODES:
            raise ConfigError(f"gnn must be one of {GNN_MODES}")

    @property
    def head_dim(self) -> int:
        return self.m // self.heads

    @property
    def relational(self) -> bool:
        return self.gnn == "rgat"

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class OntologyInputs:
    """Ontology-side inputs that depend only on (ontology, vocab):
    the padded [type token, name tokens] id matrix, its lengths, and the
    attention neighbourhoods."""

    ids: numpy.ndarray
    lengths: numpy.ndarray
    relations: RelationTable
    blocks: RelationTable

    @property
    def size(self) -> int:
        return self.ids.shape[0]


def prepare_ontology(
    ont: Ontology, vocab: Vocab, use_descriptions: bool = False
) -> OntologyInputs:
    if use_descriptions and not any(item.description for item in ont):
        warnings.warn(
            "use_descriptions is set but no ontology item has a description",
            stacklevel=find_last_user_stacklevel(),
        )
    seqs = []
    for item in ont:
        toks = list(item.name_tokens)
        if use_descriptions:
            toks.extend(item.description)
        seqs.append([vocab.type_id(item.kind)] + list(vocab.encode(toks)))
    width = max((len(s) for s in seqs), default=1)
    ids = numpy.full((len(seqs), width), vocab.pad_id, dtype=index_ty)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
    return OntologyInputs(
        ids=ids,
        lengths=numpy.array([len(s) for s in seqs], dtype=index_ty),
        relations=build_relation_table(ont),
        blocks=build_domain_block_table(ont),
    )


# relative_distances maps every (i, j) question pair to the clipped
# distance j - i, shifted into [0, 2k] to index the relation table.
def relative_distances(n: int, k: int) -> numpy.ndarray:
    pos = numpy.arange(n, dtype=index_ty)
    return numpy.clip(pos[None, :] - pos[:, None], -k, k) + k


class BiRGATEncoder:
    """Ontology and question encoders followed by a stack of dual
    relational graph attention layers.

    Every layer applies, each as a post-norm residual sub-layer,
    relational self-attention to both segments (question over relative
    distances, ontology over the hierarchy relations), cross-attention in
    both directions, and a feedforward network per segment.
    """

    def __init__(
        self,
        config: EncoderConfig,
        store: ParamStore,
        vocab_size: int,
        n_items: int,
    ):
        self.config = config
        self.store = store
        c = config
        m = c.m
        if "embed.word" not in store:
            store.add("embed.word", (vocab_size, m))
        self.scope = store.scope("enc")
        if c.oe:
            nn.add_lstm(self.scope.scope("oe.fwd"), m, m // 2)
            nn.add_lstm(self.scope.scope("oe.bwd"), m, m // 2)
        else:
            self.scope.add("items", (n_items, m))
        if c.relational:
            self.scope.add("rel.ontology", (NUM_RELATIONS, c.head_dim))
            self.scope.add(
                "rel.question", (2 * c.distance_clip + 1, c.head_dim)
            )
        for l in range(c.layers):
            layer = self.scope.scope(f"layer{l}")
            if c.gnn != "none":
                for seg in ("q_self", "o_self"):
                    nn.add_attention(layer.scope(seg), m)
                    if c.relational:
                        layer.scope(seg).add("W_z", (c.head_dim, m))
                    nn.add_norm(layer.scope(seg + "_norm"), m)
            if c.dca:
                for seg in ("q2o", "o2q"):
                    nn.add_attention(layer.scope(seg), m)
                    nn.add_norm(layer.scope(seg + "_norm"), m)
            for seg in ("q_ffn", "o_ffn"):
                nn.add_ffn(layer.scope(seg), m, c.ffn_mult * m)
                nn.add_norm(layer.scope(seg + "_norm"), m)

    @property
    def word_embedding(self) -> Tensor:
        return self.store["embed.word"]

    def mode(self, train: bool, rng=None) -> Mode:
        return Mode(train=train, rate=self.config.dropout, rng=rng)

    # Inputs.

    def encode_ontology_items(
        self, inputs: OntologyInputs, mode: Mode = nn.EVAL
    ) -> Tensor:
        """O0, one row per ontology item in id order: the final states of
        a BiLSTM read over [type token, name tokens] (or a learned per-item
        row when ontology encoding is off)."""
        if not self.config.oe:
            items = self.scope["items"]
            if items.shape[0] != inputs.size:
                raise ConfigError(
                    f"model holds {items.shape[0]} item rows, ontology has "
                    f"{inputs.size} items"
                )
            return mode.drop(items)
        x = mode.drop(T.embedding_lookup(self.word_embedding, inputs.ids))
        return nn.bilstm(
            x,
            inputs.lengths,
            self.scope.scope("oe.fwd"),
            self.scope.scope("oe.bwd"),
        )

    def encode_question_init(self, ids, mode: Mode = nn.EVAL) -> Tensor:
        """Q0: word embeddings of the (B, n) question ids, no positions."""
        ids = numpy.asarray(ids, dtype=index_ty)
        assert ids.shape[-1] >= 1, "empty question"
        return mode.drop(T.embedding_lookup(self.word_embedding, ids))

    # Self-attention.

    def ontology_attention(
        self,
        x: Tensor,
        scope: Scope,
        table: RelationTable,
        mode: Mode = nn.EVAL,
    ) -> Tuple[Tensor, Tensor]:
        """Sparse attention over the neighbourhoods of ``table``.

        For every stored pair (i, j):
        e_ij = (x_i W_q)(x_j W_k + z_ij W_z)^T / sqrt(m), normalized over
        N(i), and out_i = sum_j a_ij (x_j W_v + z_ij W_z). Returns the
        output projection (B, n, m) and the weights (B, heads, nnz) in CSR
        order.
        """
        c = self.config
        b, n, m = x.shape
        h, d = c.heads, c.head_dim
        rows, cols, indptr = table.rows, table.indices, table.indptr
        nnz = cols.shape[0]

        def heads(w):
            return T.reshape(T.matmul(x, scope[w]), (b, n, h, d))

        q_e = T.index_select(heads("W_q"), rows, axis=1)
        k_e = T.index_select(heads("W_k"), cols, axis=1)
        v_e = T.index_select(heads("W_v"), cols, axis=1)
        if c.relational:
            z = T.reshape(
                T.matmul(self.scope["rel.ontology"], scope["W_z"]),
                (NUM_RELATIONS, h, d),
            )
            z_e = T.index_select(z, table.codes, axis=0)
            k_e = k_e + z_e
            v_e = v_e + z_e
        scores = T.scale(T.sum(q_e * k_e, axis=-1), 1.0 / math.sqrt(m))
        weights = T.edge_softmax(T.transpose(scores, (0, 2, 1)), indptr)
        dropped = T.reshape(
            T.transpose(mode.drop(weights), (0, 2, 1)), (b, nnz, h, 1)
        )
        out = T.segment_sum(v_e * dropped, indptr, axis=1)
        out = T.reshape(out, (b, n, m))
        return nn.linear(out, scope.scope("out")), weights

    def question_attention(
        self,
        x: Tensor,
        scope: Scope,
        key_mask=None,
        mode: Mode = nn.EVAL,
    ) -> Tuple[Tensor, Tensor]:
        """Dense attention among question positions with clipped relative
        distance relations; padded keys are masked out."""
        c = self.config
        b, n, m = x.shape
        q = nn.split_heads(T.matmul(x, scope["W_q"]), c.heads)
        k = nn.split_heads(T.matmul(x, scope["W_k"]), c.heads)
        v = nn.split_heads(T.matmul(x, scope["W_v"]), c.heads)
        scores = T.matmul(q, k.T)
        if c.relational:
            dist = relative_distances(n, c.distance_clip)
            n_rel = 2 * c.distance_clip + 1
            z = T.reshape(
                T.matmul(self.scope["rel.question"], scope["W_z"]),
                (n_rel, c.heads, c.head_dim),
            )
            z = T.transpose(z, (1, 0, 2))
            scores = scores + T.take_last(T.matmul(q, z.T), dist)
        scores = T.scale(scores, 1.0 / math.sqrt(m))
        weights = T.softmax(
            scores, axis=-1, mask=nn.attention_mask(key_mask, n, n)
        )
        dropped = mode.drop(weights)
        out = T.matmul(dropped, v)
        if c.relational:
            out = out + T.matmul(T.scatter_last(dropped, dist, n_rel), z)
        return nn.linear(nn.merge_heads(out), scope.scope("out")), weights

    # Cross-attention.

    def dual_cross_attention(
        self,
        q: Tensor,
        o: Tensor,
        layer: int,
        key_mask=None,
        mode: Mode = nn.EVAL,
    ) -> Tuple[Tensor, Tensor, Tensor, Tensor]:
        """Question rows attend over the ontology and ontology rows attend
        over the question, with separate parameters. Returns both
        sub-layer outputs (before the residual) and both weight tensors."""
        scope = self.scope.scope(f"layer{layer}")
        heads = self.config.heads
        q_out, q_weights = nn.multihead_attention(
            q, o, scope.scope("q2o"), heads, mode
        )
        o_out, o_weights = nn.multihead_attention(
            o, q, scope.scope("o2q"), heads, mode, key_mask=key_mask
        )
        return q_out, o_out, q_weights, o_weights

    # Layers.

    def birgat_layer(
        self,
        layer: int,
        q: Tensor,
        o: Tensor,
        inputs: OntologyInputs,
        key_mask=None,
        mode: Mode = nn.EVAL,
    ) -> Tuple[Tensor, Tensor]:
        c = self.config
        scope = self.scope.scope(f"layer{layer}")
        if c.gnn != "none":
            table = inputs.relations if c.relational else inputs.blocks
            q_sub, _ = self.question_attention(
                q, scope.scope("q_self"), key_mask, mode
            )
            o_sub, _ = self.ontology_attention(
                o, scope.scope("o_self"), table, mode
            )
            q = nn.residual_norm(q, q_sub, scope.scope("q_self_norm"), mode)
            o = nn.residual_norm(o, o_sub, scope.scope("o_self_norm"), mode)
        if c.dca:
            q_sub, o_sub, _, _ = self.dual_cross_attention(
                q, o, layer, key_mask, mode
            )
            q = nn.residual_norm(q, q_sub, scope.scope("q2o_norm"), mode)
            o = nn.residual_norm(o, o_sub, scope.scope("o2q_norm"), mode)
        q = nn.residual_norm(
            q, nn.ffn(q, scope.scope("q_ffn")), scope.scope("q_ffn_norm"), mode
        )
        o = nn.residual_norm(
            o, nn.ffn(o, scope.scope("o_ffn")), scope.scope("o_ffn_norm"), mode
        )
        return q, o

    def encode(
        self,
        question_ids,
        inputs: OntologyInputs,
        key_mask=None,
        mode: Mode = nn.EVAL,
        o0: Optional[Tensor] = None,
    ) -> Tuple[Tensor, Tensor]:
        """Encoder memories Q (B, n, m) and O (B, |O|, m) for a padded
        batch of question ids. ``o0`` reuses precomputed ontology rows."""
        question_ids = numpy.asarray(question_ids, dtype=index_ty)
        if question_ids.ndim == 1:
            question_ids = question_ids[None, :]
        q = self.encode_question_init(question_ids, mode)
        if o0 is None:
            o0 = self.encode_ontology_items(inputs, mode)
        o = T.expand(o0, (q.shape[0],) + o0.shape)
        for layer in range(self.config.layers):
            q, o = self.birgat_layer(layer, q, o, inputs, key_mask, mode)
        return q, o
