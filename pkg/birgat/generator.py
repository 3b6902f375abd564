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
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy
import yaml

from .corpus import Sample, make_sample, synthesize_cross_domain
from .errors import CorpusError, DomainNotInGrammar, MalformedGrammar
from .frames import DomainNode, IntentNode, SemanticFrame, SlotPair
from .ontology import ItemKind, Ontology, load_ontology, tokenize_name
from .utils import derive_seeds, is_contiguous_subsequence

log = logging.getLogger(__name__)

DEFAULT_CONJUNCTIONS = ("and", "then", "also")
MAX_ATTEMPTS = 200

Value = Tuple[str, ...]
# A template is a token sequence in which slot placeholders have been
# resolved to slot ids.
Template = Tuple[Union[str, int], ...]

_PLACEHOLDER = re.compile(r"^\{(.+)\}$")


@dataclass(frozen=True)
class IntentGrammar:
    intent_id: int
    templates: Tuple[Template, ...]
    paraphrases: Mapping[Tuple[int, Value], Tuple[Value, ...]] = field(
        default_factory=dict
    )


@dataclass(frozen=True)
class GeneratorGrammar:
    """Templates and value inventories per intent plus the knobs that
    control the data phenomena: implied (unaligned) values, one mention
    shared by two intents, and the number of intents per utterance."""

    ontology: Ontology
    intents: Mapping[int, IntentGrammar]
    values: Mapping[int, Tuple[Value, ...]]
    p_unaligned: float = 0.0
    p_duplicate: float = 0.0
    intent_count_distribution: Mapping[int, float] = field(
        default_factory=lambda: {1: 1.0}
    )
    conjunctions: Tuple[str, ...] = DEFAULT_CONJUNCTIONS

    def __post_init__(self):
        ont = self.ontology
        for p in (self.p_unaligned, self.p_duplicate):
            if not 0.0 <= p <= 1.0:
                raise MalformedGrammar(f"probability {p} outside [0, 1]")
        dist = self.intent_count_distribution
        if (
            not dist
            or any(int(k) < 1 or v < 0 for k, v in dist.items())
            or abs(sum(dist.values()) - 1.0) > 1e-9
        ):
            raise MalformedGrammar(f"bad intent count distribution {dist}")
        if not self.conjunctions:
            raise MalformedGrammar("no conjunction words")
        for intent_id, g in self.intents.items():
            if ont[intent_id].kind is not ItemKind.INTENT:
                raise MalformedGrammar(f"item {intent_id} is not an intent")
            if not g.templates:
                raise MalformedGrammar(f"intent {intent_id} has no template")
            children = set(ont.children(intent_id))
            for t in g.templates:
                slots = [tok for tok in t if isinstance(tok, int)]
                if len(slots) != len(set(slots)):
                    raise MalformedGrammar(
                        f"repeated placeholder in a template of intent "
                        f"{ont[intent_id].name!r}"
                    )
                for s in slots:
                    if s not in children:
                        raise MalformedGrammar(
                            f"placeholder {ont[s].name!r} is not a slot of "
                            f"{ont[intent_id].name!r}"
                        )
                    if not self.values.get(s):
                        raise MalformedGrammar(
                            f"slot {ont[s].name!r} has no values"
                        )

    @property
    def domains(self) -> List[int]:
        covered = {self.ontology.domain_of(i) for i in self.intents}
        return [d for d in self.ontology.domains if d in covered]

    def intents_of(self, domain: int) -> List[int]:
        return [
            i for i in self.ontology.children(domain) if i in self.intents
        ]

    def with_knobs(self, **knobs) -> "GeneratorGrammar":
        return replace(self, **knobs)


def _slot_by_placeholder(ont: Ontology, intent_id: int, name: str) -> int:
    for s in ont.children(intent_id):
        if ont[s].hyphenated == name or ont[s].name == name:
            return s
    raise MalformedGrammar(
        f"placeholder {{{name}}} is not a slot of {ont[intent_id].name!r}"
    )


def parse_template(text: str, ont: Ontology, intent_id: int) -> Template:
    out = []
    for tok in str(text).split():
        match = _PLACEHOLDER.match(tok)
        if match:
            out.append(_slot_by_placeholder(ont, intent_id, match.group(1)))
        else:
            out.append(tok)
    return tuple(out)


def _check_keys(node, allowed, where):
    if not isinstance(node, Mapping):
        raise MalformedGrammar(f"{where}: expected a mapping")
    unknown = set(node) - set(allowed)
    if unknown:
        raise MalformedGrammar(f"{where}: unknown keys {sorted(unknown)}")


def _knobs(doc) -> dict:
    knobs = doc.get("knobs") or {}
    _check_keys(
        knobs,
        ("p_unaligned", "p_duplicate", "intent_counts", "conjunctions"),
        "knobs",
    )
    out = {}
    if "p_unaligned" in knobs:
        out["p_unaligned"] = float(knobs["p_unaligned"])
    if "p_duplicate" in knobs:
        out["p_duplicate"] = float(knobs["p_duplicate"])
    if "intent_counts" in knobs:
        out["intent_count_distribution"] = {
            int(k): float(v) for k, v in knobs["intent_counts"].items()
        }
    if "conjunctions" in knobs:
        out["conjunctions"] = tuple(str(c) for c in knobs["conjunctions"])
    return out


def _slot_values(ont: Ontology) -> Dict[int, Tuple[Value, ...]]:
    return {s: ont[s].values for s in ont.slots if ont[s].values}


def load_grammar(source, ontology: Ontology) -> GeneratorGrammar:
    """Read a grammar document (same format family as the ontology file):

    .. code-block:: yaml

        knobs: {p_unaligned: 0.15, p_duplicate: 0.15,
                intent_counts: {1: 0.5, 2: 0.5}, conjunctions: [and]}
        domains:
          - name: map
            intents:
              - name: navigate
                templates: ["take me to {destination}"]
                values: {destination: [the airport]}
                paraphrases: {destination: {home: [my place]}}

    Slot values default to the ontology's ``values`` lists.
    """
    if isinstance(source, Mapping):
        doc = source
    else:
        if isinstance(source, os.PathLike) or (
            isinstance(source, str) and "\n" not in source
            and os.path.exists(source)
        ):
            with open(source, encoding="utf-8") as f:
                source = f.read()
        try:
            doc = yaml.safe_load(source)
        except yaml.YAMLError as exc:
            raise MalformedGrammar(f"not a valid document: {exc}") from None
    _check_keys(doc, ("knobs", "domains"), "document")
    ont = ontology
    values = _slot_values(ont)
    intents: Dict[int, IntentGrammar] = {}
    for k, dnode in enumerate(doc.get("domains") or []):
        where = f"domains[{k}]"
        _check_keys(dnode, ("name", "intents"), where)
        d = ont.lookup(ItemKind.DOMAIN, tokenize_name(dnode.get("name", "")))
        if d is None:
            raise MalformedGrammar(f"{where}: unknown domain")
        for j, inode in enumerate(dnode.get("intents") or []):
            iwhere = f"{where}.intents[{j}]"
            _check_keys(
                inode, ("name", "templates", "values", "paraphrases"), iwhere
            )
            i = ont.lookup(
                ItemKind.INTENT, tokenize_name(inode.get("name", "")), d
            )
            if i is None:
                raise MalformedGrammar(f"{iwhere}: unknown intent")
            for name, vals in (inode.get("values") or {}).items():
                s = _slot_by_placeholder(ont, i, str(name))
                values[s] = tuple(tokenize_name(v) for v in vals)
            paraphrases = {}
            for name, table in (inode.get("paraphrases") or {}).items():
                s = _slot_by_placeholder(ont, i, str(name))
                for value, phrases in table.items():
                    paraphrases[(s, tokenize_name(value))] = tuple(
                        tokenize_name(p) for p in phrases
                    )
            intents[i] = IntentGrammar(
                i,
                tuple(
                    parse_template(t, ont, i)
                    for t in inode.get("templates") or []
                ),
                paraphrases,
            )
    return GeneratorGrammar(ont, intents, values, **_knobs(doc))


def default_grammar(
    ontology: Ontology, usual_paraphrase: bool = True, **knobs
) -> GeneratorGrammar:
    """Template grammar derived from an ontology with slot values: every
    intent is triggered by its name, and each slot is introduced by its
    name. With ``usual_paraphrase``, a slot's first value can be implied by
    "the usual <slot>"."""
    ont = ontology
    values = _slot_values(ont)
    intents = {}
    for i in ont.intents:
        name = list(ont[i].name_tokens)
        slots = [s for s in ont.children(i) if s in values]
        templates: List[Template] = [tuple(name)]
        if slots:
            s0 = slots[0]
            templates.append(tuple(name + list(ont[s0].name_tokens) + [s0]))
        if len(slots) >= 2:
            s0, s1 = slots[:2]
            templates.append(
                tuple(
                    name + list(ont[s0].name_tokens) + [s0, "with"]
                    + list(ont[s1].name_tokens) + [s1]
                )
            )
        if len(slots) >= 3:
            s1, s2 = slots[1:3]
            templates.append(
                tuple(
                    name + list(ont[s1].name_tokens) + [s1]
                    + list(ont[s2].name_tokens) + [s2]
                )
            )
        paraphrases = {}
        if usual_paraphrase:
            for s in slots:
                paraphrases[(s, values[s][0])] = (
                    ("the", "usual") + ont[s].name_tokens,
                )
        intents[i] = IntentGrammar(i, tuple(templates), paraphrases)
    return GeneratorGrammar(ont, intents, values, **knobs)


# The toy ontology: 3 domains with 4 intents of 3 slots each. Slots with
# the same name share one value inventory, so one value can serve two
# intents of a domain.

TOY_DOMAINS = {
    "map": {
        "navigate": ["destination", "route", "time"],
        "search place": ["place", "area", "sort"],
        "share location": ["contact", "destination", "time"],
        "check traffic": ["road", "area", "time"],
    },
    "weather": {
        "query weather": ["city", "date", "attribute"],
        "set alert": ["city", "condition", "time"],
        "compare weather": ["city", "other city", "date"],
        "check air": ["city", "date", "pollutant"],
    },
    "music": {
        "play song": ["song", "artist", "device"],
        "add playlist": ["song", "playlist", "device"],
        "set volume": ["level", "device", "mode"],
        "search album": ["artist", "year", "genre"],
    },
}

TOY_VALUES = {
    "destination": ["the airport", "central station", "home", "the office"],
    "route": ["fastest", "no tolls", "scenic", "shortest"],
    "time": ["now", "tonight", "at noon", "tomorrow morning"],
    "place": ["coffee shop", "gas station", "parking lot", "pharmacy"],
    "area": ["downtown", "near me", "the east side", "the old town"],
    "sort": ["distance", "rating", "price", "popularity"],
    "contact": ["mom", "alice", "the boss", "bob"],
    "road": ["highway one", "main street", "the ring road", "bridge road"],
    "city": ["paris", "tokyo", "new york", "berlin"],
    "date": ["today", "tomorrow", "this weekend", "next monday"],
    "attribute": ["rain", "temperature", "wind", "humidity"],
    "condition": ["storm", "snow", "heat wave", "frost"],
    "other city": ["london", "rome", "seoul", "madrid"],
    "pollutant": ["pollen", "ozone", "smog", "dust"],
    "song": ["yellow submarine", "hey jude", "blue moon", "river flows"],
    "artist": ["the beatles", "adele", "miles davis", "queen"],
    "device": ["the speaker", "headphones", "the car", "the kitchen radio"],
    "playlist": ["favorites", "workout", "chill mix", "road trip"],
    "level": ["ten", "twenty", "fifty", "max"],
    "mode": ["shuffle", "repeat", "normal", "party"],
    "year": ["1969", "1985", "2001", "2020"],
    "genre": ["jazz", "rock", "pop", "classical"],
}


def toy_ontology() -> Ontology:
    return load_ontology(
        {
            "domains": [
                {
                    "name": domain,
                    "intents": [
                        {
                            "name": intent,
                            "slots": [
                                {"name": s, "values": TOY_VALUES[s]}
                                for s in slots
                            ],
                        }
                        for intent, slots in intents.items()
                    ],
                }
                for domain, intents in TOY_DOMAINS.items()
            ]
        }
    )


def toy_grammar(
    p_unaligned: float = 0.15,
    p_duplicate: float = 0.15,
    intent_counts: Sequence[int] = (1, 2, 3),
) -> GeneratorGrammar:
    counts = list(intent_counts)
    return default_grammar(
        toy_ontology(),
        p_unaligned=p_unaligned,
        p_duplicate=p_duplicate,
        intent_count_distribution={c: 1.0 / len(counts) for c in counts},
    )


@dataclass
class _Fragment:
    intent_id: int
    template: Template
    values: Dict[int, Value]
    # slot id -> replacement tokens; () elides the mention
    realized: Dict[int, Value] = field(default_factory=dict)

    def pairs(self):
        return [tok for tok in self.template if isinstance(tok, int)]


class _Realizer:
    def __init__(self, grammar: GeneratorGrammar, rng: numpy.random.Generator):
        self.g = grammar
        self.rng = rng

    def pick(self, seq):
        return seq[int(self.rng.integers(len(seq)))]

    def fragment(self, intent_id: int, need_slot: Optional[int] = None):
        templates = self.g.intents[intent_id].templates
        if need_slot is not None:
            templates = [t for t in templates if need_slot in t]
        template = self.pick(templates)
        values = {
            s: self.pick(self.g.values[s])
            for s in template
            if isinstance(s, int)
        }
        return _Fragment(intent_id, template, values)

    def draw_count(self, cap: Optional[int] = None) -> int:
        dist = {
            int(k): v
            for k, v in self.g.intent_count_distribution.items()
            if cap is None or int(k) <= cap
        }
        if not dist:
            raise CorpusError(f"no intent count fits under {cap}")
        keys = sorted(dist)
        probs = numpy.array([dist[k] for k in keys], dtype=float)
        return int(keys[self.rng.choice(len(keys), p=probs / probs.sum())])

    def unalign(self, frags: List[_Fragment]) -> Optional[Tuple[int, int]]:
        pairs = [(k, s) for k, f in enumerate(frags) for s in f.pairs()]
        if not pairs:
            return None
        k, s = self.pick(pairs)
        frag = frags[k]
        table = self.g.intents[frag.intent_id].paraphrases
        implied = [v for v in self.g.values[s] if (s, v) in table]
        if implied:
            frag.values[s] = self.pick(implied)
            frag.realized[s] = self.pick(table[(s, frag.values[s])])
        else:
            frag.realized[s] = ()
        return k, s

    def duplicate(self, frags: List[_Fragment], skip) -> bool:
        sources = [
            (k, s)
            for k, f in enumerate(frags)
            for s in f.pairs()
            if (k, s) != skip
        ]
        if not sources or len(frags) < 2:
            return False
        ka, sa = self.pick(sources)
        value = frags[ka].values[sa]
        targets = [
            (k, s)
            for k, f in enumerate(frags)
            for s in f.pairs()
            if k != ka and (k, s) != skip and value in self.g.values[s]
        ]
        if targets:
            kb, sb = self.pick(targets)
        else:
            others = [k for k in range(len(frags)) if k != ka and (
                skip is None or k != skip[0])]
            if not others:
                return False
            kb, sb = self.pick(others), sa
            frags[kb] = self.fragment(frags[ka].intent_id, need_slot=sa)
        frags[kb].values[sb] = value
        # The later of the two mentions is dropped.
        if kb > ka:
            frags[kb].realized[sb] = ()
        else:
            frags[ka].realized[sa] = ()
        return True

    def sample(self, domain: int, count: int) -> Sample:
        intents = self.g.intents_of(domain)
        for _ in range(MAX_ATTEMPTS):
            frags = [self.fragment(self.pick(intents)) for _ in range(count)]
            tags = []
            unaligned = None
            if self.rng.random() < self.g.p_unaligned:
                unaligned = self.unalign(frags)
                if unaligned is None:
                    continue
                tags.append("unaligned")
            if self.rng.random() < self.g.p_duplicate and count >= 2:
                if self.duplicate(frags, unaligned):
                    tags.append("duplicate")
            utterance: List[str] = []
            for k, frag in enumerate(frags):
                if k:
                    utterance.extend(self.pick(self.g.conjunctions).split())
                for tok in frag.template:
                    if isinstance(tok, int):
                        utterance.extend(
                            frag.realized.get(tok, frag.values[tok])
                        )
                    else:
                        utterance.append(tok)
            if not utterance:
                continue
            if unaligned is not None:
                k, s = unaligned
                if is_contiguous_subsequence(frags[k].values[s], utterance):
                    continue
            for k, frag in enumerate(frags):
                for s in frag.pairs():
                    if (k, s) != unaligned:
                        assert is_contiguous_subsequence(
                            frag.values[s], utterance
                        ), "aligned value missing from the utterance"
            frame = SemanticFrame(
                (
                    DomainNode(
                        domain,
                        tuple(
                            IntentNode(
                                f.intent_id,
                                tuple(
                                    SlotPair(s, f.values[s])
                                    for s in f.pairs()
                                ),
                            )
                            for f in frags
                        ),
                    ),
                )
            )
            return make_sample(utterance, frame, tags=tags)
        raise CorpusError(
            f"could not realize a sample for domain {domain} in "
            f"{MAX_ATTEMPTS} attempts"
        )


def generate_single_domain(
    grammar: GeneratorGrammar, domain: int, n: int, seed: int
) -> List[Sample]:
    """``n`` single-domain samples, a pure function of (grammar, seed)."""
    if domain not in grammar.domains:
        raise DomainNotInGrammar(f"grammar has no intents for domain {domain}")
    assert n >= 1
    realizer = _Realizer(grammar, numpy.random.default_rng(seed))
    return [realizer.sample(domain, realizer.draw_count()) for _ in range(n)]


def _cross_domain(
    grammar: GeneratorGrammar, n: int, seed: int, max_intents
) -> List[Sample]:
    realizer = _Realizer(grammar, numpy.random.default_rng(seed))
    domains = grammar.domains
    out = []
    for _ in range(n):
        da, db = realizer.rng.choice(len(domains), size=2, replace=False)
        cap = None if max_intents is None else max_intents - 1
        ca = realizer.draw_count(cap)
        cb = realizer.draw_count(
            None if max_intents is None else max_intents - ca
        )
        a = realizer.sample(domains[int(da)], ca)
        b = realizer.sample(domains[int(db)], cb)
        out.append(
            synthesize_cross_domain(
                a, b, rng=realizer.rng, conjunctions=grammar.conjunctions
            )
        )
    return out


def generate_corpus(
    grammar: GeneratorGrammar,
    n: int,
    seed: int,
    cross_domain: float = 0.0,
    max_intents: Optional[int] = None,
    workers: int = 1,
) -> List[Sample]:
    """Generate ``n`` samples: round(cross_domain * n) cross-domain ones
    joined by conjunctions, the rest single-domain, spread evenly over the
    grammar's domains. Each domain is a shard with its own derived seed;
    shards are concatenated in domain order whatever ``workers`` is."""
    assert 0.0 <= cross_domain <= 1.0
    domains = grammar.domains
    if not domains:
        raise CorpusError("grammar covers no domain")
    n_cross = int(round(cross_domain * n)) if len(domains) > 1 else 0
    n_single = n - n_cross
    sizes = [
        n_single // len(domains) + (1 if k < n_single % len(domains) else 0)
        for k in range(len(domains))
    ]
    seeds = derive_seeds(seed, len(domains) + 1)
    jobs = [
        (d, size, s) for d, size, s in zip(domains, sizes, seeds) if size
    ]

    def run(job):
        d, size, s = job
        return generate_single_domain(grammar, d, size, s)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        shards = list(pool.map(run, jobs))
    out = [s for shard in shards for s in shard]
    if n_cross:
        out.extend(_cross_domain(grammar, n_cross, seeds[-1], max_intents))
    log.info(
        "generated %d samples (%d cross-domain) over %d domains",
        len(out), n_cross, len(domains),
    )
    return out
