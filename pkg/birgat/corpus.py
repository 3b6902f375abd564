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

import json
import logging
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy

from .errors import BadRatios, FrameError, SameDomain, SchemaError
from .frames import SemanticFrame, frame_from_text, frame_to_text
from .ontology import Ontology

log = logging.getLogger(__name__)

SPLITS = ("train", "dev", "test")


@dataclass(frozen=True)
class SampleMeta:
    domains: Tuple[int, ...]
    intent_count: int
    synthesized: bool = False
    tags: Tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "domains": list(self.domains),
            "intent_count": self.intent_count,
            "synthesized": self.synthesized,
            "tags": list(self.tags),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SampleMeta":
        return cls(
            domains=tuple(int(d) for d in doc["domains"]),
            intent_count=int(doc["intent_count"]),
            synthesized=bool(doc.get("synthesized", False)),
            tags=tuple(str(t) for t in doc.get("tags", ())),
        )


@dataclass(frozen=True)
class Sample:
    utterance: Tuple[str, ...]
    frame: SemanticFrame
    meta: SampleMeta

    def __post_init__(self):
        object.__setattr__(self, "utterance", tuple(self.utterance))
        assert self.utterance, "empty utterance"
        assert self.meta.intent_count == self.frame.intent_count

    @property
    def intent_count(self) -> int:
        return self.meta.intent_count


def make_sample(
    utterance: Sequence[str],
    frame: SemanticFrame,
    synthesized: bool = False,
    tags: Iterable[str] = (),
) -> Sample:
    meta = SampleMeta(
        domains=frame.domain_ids,
        intent_count=frame.intent_count,
        synthesized=synthesized,
        tags=tuple(sorted(set(tags))),
    )
    return Sample(tuple(utterance), frame, meta)


def synthesize_cross_domain(
    a: Sample,
    b: Sample,
    conjunction: Optional[str] = None,
    rng: Optional[numpy.random.Generator] = None,
    conjunctions: Sequence[str] = ("and", "then", "also"),
) -> Sample:
    """Join two samples from different domains with a conjunction word;
    the frame lists a's domains followed by b's. When ``conjunction`` is
    None it is drawn uniformly from ``conjunctions`` with ``rng``."""
    shared = set(a.meta.domains) & set(b.meta.domains)
    if shared:
        raise SameDomain(f"both samples cover domains {sorted(shared)}")
    if conjunction is None:
        assert rng is not None
        conjunction = conjunctions[int(rng.integers(len(conjunctions)))]
    frame = SemanticFrame(a.frame.domains + b.frame.domains)
    return make_sample(
        a.utterance + tuple(conjunction.split()) + b.utterance,
        frame,
        synthesized=True,
        tags=a.meta.tags + b.meta.tags,
    )


def split_corpus(
    samples: Sequence[Sample], ratios=(0.8, 0.1, 0.1), seed: int = 0
) -> Dict[str, List[Sample]]:
    """Disjoint train/dev/test splits of a seeded permutation, cut at
    round(cumulative ratio * n)."""
    ratios = tuple(float(r) for r in ratios)
    if (
        len(ratios) != len(SPLITS)
        or any(r < 0 for r in ratios)
        or abs(sum(ratios) - 1.0) > 1e-9
    ):
        raise BadRatios(
            f"ratios must be 3 non-negative numbers summing to 1, got {ratios}"
        )
    n = len(samples)
    order = numpy.random.default_rng(seed).permutation(n)
    cuts = [0]
    acc = 0.0
    for r in ratios[:-1]:
        acc += r
        cuts.append(int(round(acc * n)))
    cuts.append(n)
    return {
        name: [samples[i] for i in order[cuts[k] : cuts[k + 1]]]
        for k, name in enumerate(SPLITS)
    }


def filter_by_intent_count(
    samples: Iterable[Sample], predicate: Callable[[int], bool]
) -> List[Sample]:
    return [s for s in samples if predicate(s.intent_count)]


# Corpus files hold one sample per line:
#   utterance tokens<TAB>frame text<TAB>meta json


def format_sample(sample: Sample, ont: Ontology) -> str:
    return "\t".join(
        [
            " ".join(sample.utterance),
            frame_to_text(sample.frame, ont),
            json.dumps(sample.meta.to_dict(), sort_keys=True),
        ]
    )


def parse_sample(line: str, ont: Ontology, lineno: int = 1) -> Sample:
    fields = line.rstrip("\n").split("\t")
    if len(fields) != 3:
        raise SchemaError(lineno, f"expected 3 tab separated fields, "
                                  f"found {len(fields)}")
    utterance = tuple(fields[0].split(" "))
    if not fields[0] or "" in utterance:
        raise SchemaError(lineno, "empty utterance token")
    try:
        frame = frame_from_text(fields[1], ont)
    except FrameError as exc:
        raise SchemaError(lineno, f"bad frame: {exc}") from None
    try:
        meta = SampleMeta.from_dict(json.loads(fields[2]))
    except (ValueError, KeyError, TypeError) as exc:
        raise SchemaError(lineno, f"bad meta: {exc}") from None
    if meta.intent_count != frame.intent_count or (
        meta.domains != frame.domain_ids
    ):
        raise SchemaError(lineno, "meta disagrees with the frame")
    return Sample(utterance, frame, meta)


def save_corpus(path, samples: Iterable[Sample], ont: Ontology) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as f:
        for sample in samples:
            f.write(format_sample(sample, ont) + "\n")
            count += 1
    log.info("wrote %d samples to %s", count, path)
    return count


def load_corpus(path, ont: Ontology) -> List[Sample]:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            out.append(parse_sample(line, ont, lineno))
    log.info("read %d samples from %s", len(out), path)
    return out


def intent_histogram(samples: Iterable[Sample]) -> Dict[int, int]:
    hist: Dict[int, int] = {}
    for s in samples:
        hist[s.intent_count] = hist.get(s.intent_count, 0) + 1
    return dict(sorted(hist.items()))
