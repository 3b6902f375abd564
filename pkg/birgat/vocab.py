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

from collections import Counter
from typing import Dict, Iterable, List, Optional, Sequence

import numpy

from .frames import Sentinel
from .ontology import ItemKind, Ontology
from .types import index_ty

PAD = "<pad>"
BOS = "<bos>"
EOS = "<eos>"
UNK = "<unk>"
SPECIALS = (PAD, BOS, EOS, UNK)
SENTINEL_TOKENS = tuple(s.value for s in Sentinel)
TYPE_TOKENS = {
    ItemKind.DOMAIN: "<domain>",
    ItemKind.INTENT: "<intent>",
    ItemKind.SLOT: "<slot>",
}
RESERVED = SPECIALS + SENTINEL_TOKENS + tuple(TYPE_TOKENS.values())


def tokenize(text: str, mode: str = "word") -> List[str]:
    """Whitespace tokens, or single characters with whitespace dropped for
    unsegmented scripts."""
    if mode == "word":
        return text.split()
    if mode == "char":
        return [c for c in text if not c.isspace()]
    raise ValueError(f"unknown tokenizer mode {mode!r}")


class Vocab:
    """Dense token ids. The reserved tokens (PAD, BOS, EOS, UNK, the seven
    sentinels and the three ontology type tokens) always hold the lowest
    ids, in that order."""

    pad_id = 0
    bos_id = 1
    eos_id = 2
    unk_id = 3

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[: len(RESERVED)]) != RESERVED:
            raise ValueError("vocabulary must start with the reserved tokens")
        self._tokens: List[str] = tokens
        self._ids: Dict[str, int] = {}
        for i, tok in enumerate(tokens):
            if tok in self._ids:
                raise ValueError(f"token {tok!r} listed twice")
            self._ids[tok] = i
        self._sentinel_ids = {
            s: self._ids[s.value] for s in Sentinel
        }
        self._sentinel_of = {v: k for k, v in self._sentinel_ids.items()}

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self._tokens == other._tokens

    def __repr__(self) -> str:
        return f"Vocab(size={len(self)})"

    @property
    def tokens(self) -> List[str]:
        return list(self._tokens)

    def lookup(self, token: str) -> int:
        return self._ids.get(token, self.unk_id)

    def token(self, token_id: int) -> str:
        return self._tokens[token_id]

    def encode(self, tokens: Iterable[str]) -> numpy.ndarray:
        return numpy.array([self.lookup(t) for t in tokens], dtype=index_ty)

    def decode(self, ids: Iterable[int]) -> List[str]:
        return [self._tokens[int(i)] for i in ids]

    def sentinel_id(self, sentinel: Sentinel) -> int:
        return self._sentinel_ids[sentinel]

    def sentinel_of(self, token_id: int) -> Optional[Sentinel]:
        return self._sentinel_of.get(int(token_id))

    def type_id(self, kind: ItemKind) -> int:
        return self._ids[TYPE_TOKENS[kind]]

    def to_lines(self) -> List[str]:
        return list(self._tokens)

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "Vocab":
        return cls([line.rstrip("\n") for line in lines if line.strip()])


def ontology_tokens(ont: Ontology) -> List[str]:
    out = []
    for item in ont:
        out.extend(item.name_tokens)
        out.extend(item.description)
    return out


def build_vocab(
    samples,
    ontology: Optional[Ontology] = None,
    min_freq: int = 1,
    include_ontology: bool = True,
    exclude: Iterable[str] = (),
) -> Vocab:
    """Reserved tokens, then every utterance or gold value token seen at
    least ``min_freq`` times, most frequent first. Ontology name and
    description tokens are always added when ``include_ontology`` is set;
    tokens in ``exclude`` never are."""
    assert min_freq >= 1
    exclude = set(exclude)
    counts = Counter()
    for sample in samples:
        counts.update(sample.utterance)
        for value in sample.frame.slot_values():
            counts.update(value)
    keep = {t for t, c in counts.items() if c >= min_freq}
    if include_ontology and ontology is not None:
        for tok in ontology_tokens(ontology):
            keep.add(tok)
            counts[tok] += 0
    keep -= exclude
    keep -= set(RESERVED)
    ordered = sorted(keep, key=lambda t: (-counts[t], t))
    return Vocab(list(RESERVED) + ordered)
