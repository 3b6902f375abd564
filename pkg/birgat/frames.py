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

import enum
import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple, Union

from .errors import InvalidFrame, ParseError
from .ontology import ItemKind, Ontology


class Sentinel(enum.Enum):
    OPEN_DOMAIN = "["
    CLOSE_DOMAIN = "]"
    OPEN_INTENT = "("
    CLOSE_INTENT = ")"
    OPEN_SLOT = "{"
    CLOSE_SLOT = "}"
    EQ = "="


@dataclass(frozen=True, order=True)
class OntologyRef:
    id: int


@dataclass(frozen=True, order=True)
class Word:
    text: str


Token = Union[Sentinel, OntologyRef, Word]


def _tuple(obj, name, value):
    object.__setattr__(obj, name, tuple(value))


@dataclass(frozen=True)
class SlotPair:
    slot_id: int
    value: Tuple[str, ...]

    def __post_init__(self):
        _tuple(self, "value", self.value)


@dataclass(frozen=True)
class IntentNode:
    intent_id: int
    slots: Tuple[SlotPair, ...] = ()

    def __post_init__(self):
        _tuple(self, "slots", self.slots)


@dataclass(frozen=True)
class DomainNode:
    domain_id: int
    intents: Tuple[IntentNode, ...]

    def __post_init__(self):
        _tuple(self, "intents", self.intents)


@dataclass(frozen=True)
class SemanticFrame:
    domains: Tuple[DomainNode, ...]

    def __post_init__(self):
        _tuple(self, "domains", self.domains)

    @property
    def intent_count(self) -> int:
        return sum(len(d.intents) for d in self.domains)

    @property
    def domain_ids(self) -> Tuple[int, ...]:
        return tuple(d.domain_id for d in self.domains)

    def slot_values(self) -> List[Tuple[str, ...]]:
        return [
            pair.value
            for d in self.domains
            for i in d.intents
            for pair in i.slots
        ]


def _check_ref(ont: Ontology, item_id, kind: ItemKind, parent) -> None:
    if not isinstance(item_id, int) or not 0 <= item_id < len(ont):
        raise InvalidFrame(f"{item_id!r} is not an ontology item id")
    item = ont[item_id]
    if item.kind is not kind:
        raise InvalidFrame(
            f"item {item_id} is a {item.kind.value}, expected a {kind.value}"
        )
    if item.parent_id != parent:
        raise InvalidFrame(
            f"{kind.value} {item.name!r} is not a child of item {parent}"
        )


def validate_frame(frame: SemanticFrame, ont: Ontology) -> None:
    if not frame.domains:
        raise InvalidFrame("a frame needs at least one domain")
    for d in frame.domains:
        _check_ref(ont, d.domain_id, ItemKind.DOMAIN, None)
        if not d.intents:
            raise InvalidFrame(f"domain {d.domain_id} has no intent")
        for i in d.intents:
            _check_ref(ont, i.intent_id, ItemKind.INTENT, d.domain_id)
            for pair in i.slots:
                _check_ref(ont, pair.slot_id, ItemKind.SLOT, i.intent_id)
                if not pair.value:
                    raise InvalidFrame(f"slot {pair.slot_id} has no value")
                if any(word in _SENTINELS for word in pair.value):
                    raise InvalidFrame(
                        f"slot {pair.slot_id} value {pair.value!r} contains "
                        "a sentinel"
                    )


def _ref_tokens(ont: Ontology, item_id: int, spelled: bool) -> List[Token]:
    if spelled:
        return [Word(t) for t in ont[item_id].name_tokens]
    return [OntologyRef(item_id)]


def linearize(
    frame: SemanticFrame, ont: Ontology, spelled: bool = False
) -> List[Token]:
    """Serialize ``frame`` with layer-distinct sentinels, preserving sibling
    order. With ``spelled`` set, ontology items are written as their name
    words instead of atomic references."""
    validate_frame(frame, ont)
    out: List[Token] = []
    for d in frame.domains:
        out.append(Sentinel.OPEN_DOMAIN)
        out.extend(_ref_tokens(ont, d.domain_id, spelled))
        for i in d.intents:
            out.append(Sentinel.OPEN_INTENT)
            out.extend(_ref_tokens(ont, i.intent_id, spelled))
            for pair in i.slots:
                out.append(Sentinel.OPEN_SLOT)
                out.extend(_ref_tokens(ont, pair.slot_id, spelled))
                out.append(Sentinel.EQ)
                out.extend(Word(w) for w in pair.value)
                out.append(Sentinel.CLOSE_SLOT)
            out.append(Sentinel.CLOSE_INTENT)
        out.append(Sentinel.CLOSE_DOMAIN)
    return out


def _describe(tok) -> str:
    if isinstance(tok, Sentinel):
        return repr(tok.value)
    if isinstance(tok, OntologyRef):
        return f"item {tok.id}"
    if isinstance(tok, Word):
        return f"word {tok.text!r}"
    return repr(tok)


class _Parser:
    # One token of lookahead decides every production:
    #   output       := domain_block+
    #   domain_block := "[" ref(domain) intent_block+ "]"
    #   intent_block := "(" ref(intent) slot_pair* ")"
    #   slot_pair    := "{" ref(slot) "=" word+ "}"

    def __init__(self, tokens: Sequence, ont: Ontology, spelled: bool):
        self.tokens = list(tokens)
        self.ont = ont
        self.spelled = spelled
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def fail(self, expected: str):
        tok = self.peek()
        found = "end of input" if tok is None else _describe(tok)
        raise ParseError(self.pos, expected, found)

    def expect(self, sentinel: Sentinel) -> None:
        if self.peek() is not sentinel:
            self.fail(repr(sentinel.value))
        self.pos += 1

    def ref(self, kind: ItemKind, parent, stop: Tuple[Sentinel, ...]) -> int:
        if self.spelled:
            return self._spelled_ref(kind, parent, stop)
        tok = self.peek()
        where = "" if parent is None else f" under item {parent}"
        expected = f"a {kind.value} reference{where}"
        if not isinstance(tok, OntologyRef):
            self.fail(expected)
        item_id = tok.id
        if (
            not isinstance(item_id, int)
            or not 0 <= item_id < len(self.ont)
            or self.ont[item_id].kind is not kind
            or self.ont[item_id].parent_id != parent
        ):
            self.fail(expected)
        self.pos += 1
        return item_id

    def _spelled_ref(self, kind, parent, stop) -> int:
        start = self.pos
        words = []
        while isinstance(self.peek(), Word):
            words.append(self.peek().text)
            self.pos += 1
        if self.peek() not in stop:
            self.fail(" or ".join(repr(s.value) for s in stop))
        item_id = self.ont.lookup(kind, words, parent)
        if item_id is None:
            where = "" if parent is None else f" under item {parent}"
            raise ParseError(
                start,
                f"a {kind.value} name{where}",
                "end of input" if not words else repr(" ".join(words)),
            )
        return item_id

    def output(self) -> SemanticFrame:
        domains = [self.domain_block()]
        while self.peek() is Sentinel.OPEN_DOMAIN:
            domains.append(self.domain_block())
        if self.pos != len(self.tokens):
            self.fail("'[' or end of input")
        return SemanticFrame(tuple(domains))

    def domain_block(self) -> DomainNode:
        self.expect(Sentinel.OPEN_DOMAIN)
        domain = self.ref(ItemKind.DOMAIN, None, (Sentinel.OPEN_INTENT,))
        intents = [self.intent_block(domain)]
        while self.peek() is Sentinel.OPEN_INTENT:
            intents.append(self.intent_block(domain))
        self.expect(Sentinel.CLOSE_DOMAIN)
        return DomainNode(domain, tuple(intents))

    def intent_block(self, domain: int) -> IntentNode:
        self.expect(Sentinel.OPEN_INTENT)
        intent = self.ref(
            ItemKind.INTENT,
            domain,
            (Sentinel.OPEN_SLOT, Sentinel.CLOSE_INTENT),
        )
        slots = []
        while self.peek() is Sentinel.OPEN_SLOT:
            slots.append(self.slot_pair(intent))
        self.expect(Sentinel.CLOSE_INTENT)
        return IntentNode(intent, tuple(slots))

    def slot_pair(self, intent: int) -> SlotPair:
        self.expect(Sentinel.OPEN_SLOT)
        slot = self.ref(ItemKind.SLOT, intent, (Sentinel.EQ,))
        self.expect(Sentinel.EQ)
        words = []
        while isinstance(self.peek(), Word):
            words.append(self.peek().text)
            self.pos += 1
        if not words:
            self.fail("a value word")
        self.expect(Sentinel.CLOSE_SLOT)
        return SlotPair(slot, tuple(words))


def delinearize(
    tokens: Sequence, ont: Ontology, spelled: bool = False
) -> SemanticFrame:
    """Parse a token sequence back into a frame. Any input either parses
    or raises ParseError naming the offending position."""
    return _Parser(tokens, ont, spelled).output()


# Text rendering used in corpus files and logs.

_REF = re.compile(r"^@(\d+):(domain|intent|slot):(\S+)$")
_SENTINELS = {s.value: s for s in Sentinel}


def render_token(tok: Token, ont: Ontology) -> str:
    if isinstance(tok, Sentinel):
        return tok.value
    if isinstance(tok, OntologyRef):
        item = ont[tok.id]
        return f"@{item.id}:{item.kind.value}:{item.hyphenated}"
    return tok.text


def render_tokens(tokens: Iterable[Token], ont: Ontology) -> str:
    return " ".join(render_token(t, ont) for t in tokens)


def parse_text(text: str, ont: Ontology) -> List[Token]:
    out: List[Token] = []
    for pos, piece in enumerate(text.split()):
        if piece in _SENTINELS:
            out.append(_SENTINELS[piece])
            continue
        match = _REF.match(piece)
        if match is None:
            out.append(Word(piece))
            continue
        item_id = int(match.group(1))
        if item_id >= len(ont) or (
            ont[item_id].kind.value != match.group(2)
            or ont[item_id].hyphenated != match.group(3)
        ):
            raise ParseError(pos, "a reference to an existing item", piece)
        out.append(OntologyRef(item_id))
    return out


def frame_to_text(frame: SemanticFrame, ont: Ontology) -> str:
    return render_tokens(linearize(frame, ont), ont)


def frame_from_text(text: str, ont: Ontology) -> SemanticFrame:
    return delinearize(parse_text(text, ont), ont)


# Canonical form and scoring.


def _slot_key(pair: SlotPair):
    return (pair.slot_id, pair.value)


def _intent_key(node: IntentNode):
    return (node.intent_id, tuple(_slot_key(p) for p in node.slots))


def canonicalize(frame: SemanticFrame) -> SemanticFrame:
    domains = []
    for d in frame.domains:
        intents = [
            IntentNode(i.intent_id, tuple(sorted(i.slots, key=_slot_key)))
            for i in d.intents
        ]
        domains.append(
            DomainNode(d.domain_id, tuple(sorted(intents, key=_intent_key)))
        )
    domains.sort(
        key=lambda d: (d.domain_id, tuple(_intent_key(i) for i in d.intents))
    )
    return SemanticFrame(tuple(domains))


def exact_match(
    pred: Optional[SemanticFrame], gold: SemanticFrame, strict: bool = False
) -> bool:
    """True iff the frames agree. ``pred`` is None for an unparseable
    prediction, which never matches. ``strict`` compares sibling order
    too, i.e. the linearizations."""
    if pred is None:
        return False
    if strict:
        return pred == gold
    return canonicalize(pred) == canonicalize(gold)


def sentence_accuracy(pairs, strict: bool = False) -> float:
    pairs = list(pairs)
    if not pairs:
        return 0.0
    hits = sum(exact_match(p, g, strict=strict) for p, g in pairs)
    return hits / len(pairs)


def quadruples(frame: SemanticFrame) -> Counter:
    """Multiset of (domain, intent, slot, value); an intent without slots
    contributes (domain, intent, None, ())."""
    out = Counter()
    for d in frame.domains:
        for i in d.intents:
            if not i.slots:
                out[(d.domain_id, i.intent_id, None, ())] += 1
            for pair in i.slots:
                out[(d.domain_id, i.intent_id, pair.slot_id, pair.value)] += 1
    return out


# JSON trees keyed by item names, used by the linearize/parse tools.


def frame_to_dict(frame: SemanticFrame, ont: Ontology) -> dict:
    return {
        "domains": [
            {
                "domain": ont[d.domain_id].name,
                "intents": [
                    {
                        "intent": ont[i.intent_id].name,
                        "slots": [
                            {
                                "slot": ont[p.slot_id].name,
                                "value": " ".join(p.value),
                            }
                            for p in i.slots
                        ],
                    }
                    for i in d.intents
                ],
            }
            for d in frame.domains
        ]
    }


def frame_from_dict(doc, ont: Ontology) -> SemanticFrame:
    def resolve(kind, name, parent):
        found = ont.lookup(kind, str(name).split(), parent)
        if found is None:
            raise InvalidFrame(f"unknown {kind.value} {name!r}")
        return found

    try:
        domains = []
        for dnode in doc["domains"]:
            d = resolve(ItemKind.DOMAIN, dnode["domain"], None)
            intents = []
            for inode in dnode["intents"]:
                i = resolve(ItemKind.INTENT, inode["intent"], d)
                slots = tuple(
                    SlotPair(
                        resolve(ItemKind.SLOT, snode["slot"], i),
                        tuple(str(snode["value"]).split()),
                    )
                    for snode in inode.get("slots", [])
                )
                intents.append(IntentNode(i, slots))
            domains.append(DomainNode(d, tuple(intents)))
    except (KeyError, TypeError) as exc:
        raise InvalidFrame(f"malformed frame tree: {exc}") from None
    frame = SemanticFrame(tuple(domains))
    validate_frame(frame, ont)
    return frame
