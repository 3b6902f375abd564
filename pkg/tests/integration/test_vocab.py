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

import pytest
from utils.common import small_ontology_doc

from birgat.corpus import make_sample
from birgat.frames import (
    DomainNode,
    IntentNode,
    SemanticFrame,
    Sentinel,
    SlotPair,
)
from birgat.ontology import ItemKind, load_ontology
from birgat.vocab import RESERVED, Vocab, build_vocab, tokenize


@pytest.fixture(scope="module")
def ont():
    return load_ontology(small_ontology_doc)


def samples():
    value = SlotPair(2, ["grandma's", "house"])
    nav = SemanticFrame([DomainNode(0, [IntentNode(1, [value])])])
    nxt = SemanticFrame([DomainNode(6, [IntentNode(10)])])
    return [
        make_sample("take me to grandma's house".split(), nav),
        make_sample("next one please".split(), nxt),
        make_sample("next please".split(), nxt),
    ]


def test_reserved_layout():
    vocab = Vocab(RESERVED)
    assert (vocab.pad_id, vocab.bos_id, vocab.eos_id, vocab.unk_id) == (
        0, 1, 2, 3,
    )
    assert [vocab.sentinel_id(s) for s in Sentinel] == list(range(4, 11))
    assert vocab.sentinel_of(4) is Sentinel.OPEN_DOMAIN
    assert vocab.sentinel_of(0) is None
    assert vocab.type_id(ItemKind.SLOT) == 13


def test_build_vocab_order(ont):
    vocab = build_vocab(samples(), include_ontology=False)
    words = vocab.tokens[len(RESERVED):]
    # Counts: next 2, please 2, grandma's 2 (utterance and value),
    # house 2, the others 1; ties break alphabetically.
    assert words == [
        "grandma's", "house", "next", "please", "me", "one", "take", "to",
    ]


def test_build_vocab_options(ont):
    vocab = build_vocab(samples(), ont, min_freq=2, exclude=["house"])
    assert "house" not in vocab
    assert "take" not in vocab
    assert "next" in vocab and "destination" in vocab
    assert "routes" in vocab
    assert vocab.lookup("take") == vocab.unk_id


def test_encode_decode(ont):
    vocab = build_vocab(samples(), ont)
    ids = vocab.encode(["take", "me", "elsewhere"])
    assert ids[-1] == vocab.unk_id
    assert vocab.decode(ids) == ["take", "me", "<unk>"]


def test_lines_round_trip(ont):
    vocab = build_vocab(samples(), ont)
    assert Vocab.from_lines(line + "\n" for line in vocab.to_lines()) == vocab


@pytest.mark.parametrize(
    "tokens", [["a"] + list(RESERVED), list(RESERVED) + ["a", "a"]]
)
def test_bad_vocab(tokens):
    with pytest.raises(ValueError):
        Vocab(tokens)


def test_tokenize():
    assert tokenize("  open the   window ") == ["open", "the", "window"]
    assert tokenize("打开 车窗", mode="char") == ["打", "开", "车", "窗"]
    with pytest.raises(ValueError):
        tokenize("x", mode="bpe")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main(sys.argv))
