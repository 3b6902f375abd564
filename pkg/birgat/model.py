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
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy

from . import nn
from .corpus import Sample
from .decoder import DecoderConfig, OutputSpace, PointerGeneratorDecoder
from .encoder import BiRGATEncoder, EncoderConfig, prepare_ontology
from .errors import ConfigError, GoldContainsUnknownOntologyItem, ParseError
from .frames import (
    OntologyRef,
    SemanticFrame,
    Sentinel,
    Token,
    Word,
    delinearize,
    linearize,
    render_tokens,
)
from .nn import ParamStore
from .ontology import Ontology
from .search import Hypothesis, beam_search, greedy_decode
from .tensor import Tensor
from .types import index_ty, mask_ty
from .vocab import Vocab

log = logging.getLogger(__name__)

STATUS_OK = "ok"
STATUS_PARSE_ERROR = "parse-error"
STATUS_UNFINISHED = "unfinished"


# Spare decoder steps kept above the longest target seen when sizing
# max_len from a corpus.
MAX_LEN_HEADROOM = 8


def target_length(
    frame: SemanticFrame, ontology: Ontology, spelled: bool = False
) -> int:
    """Decoder steps needed to emit ``frame``: its linearization plus
    EOS."""
    return len(linearize(frame, ontology, spelled=spelled)) + 1


def fit_decoder_config(
    config: DecoderConfig,
    samples: Sequence[Sample],
    ontology: Ontology,
    headroom: int = MAX_LEN_HEADROOM,
) -> DecoderConfig:
    """``config`` with max_len raised, when needed, so that every target
    in ``samples`` fits with ``headroom`` steps to spare. max_len is
    never lowered."""
    spelled = not config.copy
    longest = max(
        (target_length(s.frame, ontology, spelled) for s in samples),
        default=0,
    )
    if not longest or longest + headroom <= config.max_len:
        return config
    log.info(
        "raising decoder max_len from %d to %d for targets of up to %d "
        "steps",
        config.max_len,
        longest + headroom,
        longest,
    )
    return replace(config, max_len=longest + headroom)


@dataclass
class Batch:
    """A padded batch of (question, target) pairs in extended ids.

    ``oovs[b]`` lists the question words of sample b that are missing from
    the vocabulary; word k of that list has the extended id
    ``len(vocab) + k``.
    """

    src_ids: numpy.ndarray
    src_mask: numpy.ndarray
    src_ext: numpy.ndarray
    oovs: List[List[str]]
    max_oov: int
    tgt_in: Optional[numpy.ndarray] = None
    tgt_out: Optional[numpy.ndarray] = None
    tgt_mask: Optional[numpy.ndarray] = None

    def __len__(self) -> int:
        return self.src_ids.shape[0]

    @property
    def num_target_tokens(self) -> int:
        return 0 if self.tgt_mask is None else int(self.tgt_mask.sum())


@dataclass(frozen=True)
class Prediction:
    tokens: Tuple[Token, ...]
    frame: Optional[SemanticFrame]
    status: str
    logprob: float
    text: str

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK


def source_oovs(utterance: Sequence[str], vocab: Vocab) -> List[str]:
    out: List[str] = []
    for word in utterance:
        if word not in vocab and word not in out:
            out.append(word)
    return out


def extended_source(
    utterance: Sequence[str], vocab: Vocab, oovs: Sequence[str]
) -> numpy.ndarray:
    v = len(vocab)
    return numpy.array(
        [
            vocab.lookup(w) if w in vocab else v + oovs.index(w)
            for w in utterance
        ],
        dtype=index_ty,
    )


class BiRGATModel:
    """The encoder and the pointer-generator decoder over one ontology
    and vocabulary, sharing a single ParamStore and word embedding."""

    def __init__(
        self,
        ontology: Ontology,
        vocab: Vocab,
        encoder_config: EncoderConfig = EncoderConfig(),
        decoder_config: DecoderConfig = DecoderConfig(),
        seed: int = 0,
    ):
        self.ontology = ontology
        self.vocab = vocab
        self.encoder_config = encoder_config
        self.decoder_config = decoder_config
        self.seed = seed
        self.store = ParamStore(seed)
        self.encoder = BiRGATEncoder(
            encoder_config, self.store, len(vocab), len(ontology)
        )
        self.decoder = PointerGeneratorDecoder(
            decoder_config,
            self.store,
            m=encoder_config.m,
            heads=encoder_config.heads,
            vocab_size=len(vocab),
            n_items=len(ontology),
            dropout=encoder_config.dropout,
            ffn_mult=encoder_config.ffn_mult,
        )
        self.inputs = prepare_ontology(
            ontology, vocab, encoder_config.use_descriptions
        )
        log.debug(
            "model with %d parameters in %d tensors",
            self.store.num_parameters(),
            len(self.store),
        )

    @property
    def spelled(self) -> bool:
        return not self.decoder_config.copy

    def space(self, max_oov: int) -> OutputSpace:
        return self.decoder.space(max_oov)

    def meta(self) -> dict:
        return {
            "encoder": self.encoder_config.to_dict(),
            "decoder": self.decoder_config.to_dict(),
            "seed": self.seed,
            "vocab": self.vocab.to_lines(),
        }

    # Token mapping.

    def target_ids(
        self, tokens: Sequence[Token], oovs: Sequence[str], space: OutputSpace
    ) -> List[int]:
        out = []
        for tok in tokens:
            if isinstance(tok, Sentinel):
                out.append(self.vocab.sentinel_id(tok))
            elif isinstance(tok, OntologyRef):
                if not 0 <= tok.id < len(self.ontology):
                    raise GoldContainsUnknownOntologyItem(
                        f"gold refers to item {tok.id}, the ontology has "
                        f"{len(self.ontology)} items"
                    )
                out.append(space.item(tok.id))
            elif tok.text in self.vocab:
                out.append(self.vocab.lookup(tok.text))
            elif self.decoder_config.copy and tok.text in oovs:
                out.append(space.vocab + list(oovs).index(tok.text))
            else:
                out.append(self.vocab.unk_id)
        return out

    def output_tokens(
        self, ids: Sequence[int], oovs: Sequence[str], space: OutputSpace
    ) -> List[Token]:
        out: List[Token] = []
        for i in ids:
            i = int(i)
            if i >= space.item_offset:
                out.append(OntologyRef(i - space.item_offset))
            elif i >= space.vocab:
                out.append(Word(oovs[i - space.vocab]))
            else:
                sentinel = self.vocab.sentinel_of(i)
                if sentinel is not None:
                    out.append(sentinel)
                else:
                    out.append(Word(self.vocab.token(i)))
        return out

    # Batching.

    def make_batch(
        self,
        utterances: Sequence[Sequence[str]],
        frames: Optional[Sequence[SemanticFrame]] = None,
    ) -> Batch:
        assert utterances, "empty batch"
        b = len(utterances)
        n = max(len(u) for u in utterances)
        src_ids = numpy.full((b, n), self.vocab.pad_id, dtype=index_ty)
        src_ext = numpy.full((b, n), self.vocab.pad_id, dtype=index_ty)
        src_mask = numpy.zeros((b, n), dtype=mask_ty)
        oovs = []
        for k, utt in enumerate(utterances):
            assert len(utt) >= 1, "empty utterance"
            words = source_oovs(utt, self.vocab)
            oovs.append(words)
            src_ids[k, : len(utt)] = self.vocab.encode(utt)
            src_ext[k, : len(utt)] = extended_source(utt, self.vocab, words)
            src_mask[k, : len(utt)] = True
        batch = Batch(
            src_ids, src_mask, src_ext, oovs, max(len(o) for o in oovs)
        )
        if frames is None:
            return batch
        space = self.space(batch.max_oov)
        targets = []
        for frame, words in zip(frames, oovs):
            toks = linearize(frame, self.ontology, spelled=self.spelled)
            ids = self.target_ids(toks, words, space)
            if len(ids) + 1 > self.decoder_config.max_len:
                raise ConfigError(
                    f"target of {len(ids) + 1} tokens exceeds max_len="
                    f"{self.decoder_config.max_len}"
                )
            targets.append(ids)
        steps = max(len(t) for t in targets) + 1
        batch.tgt_in = numpy.full((b, steps), self.vocab.pad_id, index_ty)
        batch.tgt_out = numpy.full((b, steps), self.vocab.pad_id, index_ty)
        batch.tgt_mask = numpy.zeros((b, steps), dtype=mask_ty)
        for k, ids in enumerate(targets):
            batch.tgt_in[k, : len(ids) + 1] = [self.vocab.bos_id] + ids
            batch.tgt_out[k, : len(ids) + 1] = ids + [self.vocab.eos_id]
            batch.tgt_mask[k, : len(ids) + 1] = True
        return batch

    def fits(self, sample: Sample) -> bool:
        """Whether the target of ``sample`` fits in max_len steps."""
        length = target_length(sample.frame, self.ontology, self.spelled)
        return length <= self.decoder_config.max_len

    def batch_of(self, samples: Sequence[Sample]) -> Batch:
        return self.make_batch(
            [s.utterance for s in samples], [s.frame for s in samples]
        )

    # Training objective.

    def mode(self, train: bool, rng=None) -> nn.Mode:
        return self.encoder.mode(train, rng)

    def encode(self, batch: Batch, mode: nn.Mode = nn.EVAL):
        return self.encoder.encode(
            batch.src_ids, self.inputs, batch.src_mask, mode
        )

    def loss(
        self,
        batch: Batch,
        train: bool = False,
        rng: Optional[numpy.random.Generator] = None,
    ) -> Tensor:
        """Teacher-forced negative log-likelihood of the batch targets,
        averaged over samples."""
        assert batch.tgt_in is not None, "batch has no targets"
        mode = self.mode(train, rng)
        q, o = self.encode(batch, mode)
        return self.decoder.sequence_loss(
            batch.tgt_in,
            batch.tgt_out,
            batch.tgt_mask,
            q,
            o,
            batch.src_ext,
            self.space(batch.max_oov),
            batch.src_mask,
            mode,
        )

    # Inference.

    def score_fn(self, utterance: Sequence[str]):
        """Next-token scorer over one question for the search routines,
        with the encoder memories computed once."""
        batch = self.make_batch([utterance])
        q, o = self.encode(batch)
        space = self.space(batch.max_oov)

        def score(prefixes):
            return self.decoder.step_logprobs(
                prefixes, q, o, batch.src_ext, space, batch.src_mask
            )

        return score, batch.oovs[0], space

    def search(
        self,
        utterance: Sequence[str],
        beam: Optional[int] = None,
        max_len: Optional[int] = None,
    ) -> Tuple[Hypothesis, List[str], OutputSpace]:
        beam = self.decoder_config.beam if beam is None else beam
        max_len = self.decoder_config.max_len if max_len is None else max_len
        score, oovs, space = self.score_fn(utterance)
        bos, eos = self.vocab.bos_id, self.vocab.eos_id
        if beam == 1:
            hyp = greedy_decode(score, bos, eos, max_len)
        else:
            hyp = beam_search(score, bos, eos, beam, max_len)
        return hyp, oovs, space

    def predict(
        self,
        utterance: Sequence[str],
        beam: Optional[int] = None,
        max_len: Optional[int] = None,
    ) -> Prediction:
        hyp, oovs, space = self.search(utterance, beam, max_len)
        tokens = tuple(self.output_tokens(hyp.tokens, oovs, space))
        text = render_tokens(tokens, self.ontology)
        if not hyp.finished:
            return Prediction(
                tokens, None, STATUS_UNFINISHED, hyp.logprob, text
            )
        try:
            frame = delinearize(tokens, self.ontology, spelled=self.spelled)
        except ParseError as exc:
            log.debug("unparseable prediction %r: %s", text, exc)
            return Prediction(
                tokens, None, STATUS_PARSE_ERROR, hyp.logprob, text
            )
        if self.spelled:
            text = render_tokens(
                linearize(frame, self.ontology), self.ontology
            )
        return Prediction(tokens, frame, STATUS_OK, hyp.logprob, text)

    # Persistence of the parameters alone; the trainer adds optimizer state.

    def state_dict(self) -> Dict[str, numpy.ndarray]:
        return self.store.state_dict()

    def load_state_dict(self, state: Dict[str, numpy.ndarray]) -> None:
        self.store.load_state_dict(state)
