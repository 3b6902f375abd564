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

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy
from typing_extensions import Protocol


class ScoreFn(Protocol):
    def __call__(self, prefixes: Sequence[Tuple[int, ...]]) -> numpy.ndarray:
        """Next-token log-probabilities, one row per prefix. Every prefix
        starts with BOS and all prefixes in a call have equal length."""
        ...


@dataclass(frozen=True)
class Hypothesis:
    tokens: Tuple[int, ...]
    logprob: float
    finished: bool

    def __len__(self) -> int:
        return len(self.tokens)


# _top returns the k best column indices of row, best first, breaking ties
# by the smaller index.
def _top(row: numpy.ndarray, k: int) -> numpy.ndarray:
    k = min(k, row.shape[0])
    order = numpy.lexsort((numpy.arange(row.shape[0]), -row))
    return order[:k]


def greedy_decode(
    score_fn: ScoreFn, bos: int, eos: int, max_len: int
) -> Hypothesis:
    """Take the most likely token (first index on ties) until EOS or
    ``max_len`` generated tokens; the EOS itself is not returned."""
    assert max_len >= 1
    tokens: Tuple[int, ...] = ()
    total = 0.0
    for _ in range(max_len):
        row = score_fn([(bos,) + tokens])[0]
        best = int(numpy.argmax(row))
        total += float(row[best])
        if best == eos:
            return Hypothesis(tokens, total, True)
        tokens += (best,)
    return Hypothesis(tokens, total, False)


def beam_search(
    score_fn: ScoreFn, bos: int, eos: int, beam: int, max_len: int
) -> Hypothesis:
    """Keep the ``beam`` best partial hypotheses by summed log-probability,
    expanding each by its ``beam`` best continuations. Hypotheses that
    emit EOS are set aside; the best of them is returned, without length
    normalization. Ties are broken by the lexicographically smaller token
    sequence. If nothing finished within ``max_len`` steps, the best
    partial hypothesis is returned flagged unfinished."""
    assert beam >= 1 and max_len >= 1
    alive: List[Tuple[float, Tuple[int, ...]]] = [(0.0, ())]
    finished: List[Tuple[float, Tuple[int, ...]]] = []
    for _ in range(max_len):
        scores = score_fn([(bos,) + toks for _, toks in alive])
        candidates = []
        for (base, toks), row in zip(alive, scores):
            for c in _top(row, beam):
                candidates.append((base + float(row[c]), toks + (int(c),)))
        candidates.sort(key=lambda cand: (-cand[0], cand[1]))
        alive = []
        for score, toks in candidates:
            if score == -numpy.inf:
                continue
            if toks[-1] == eos:
                finished.append((score, toks[:-1]))
            elif len(alive) < beam:
                alive.append((score, toks))
        if not alive:
            break
        # Log-probabilities never increase along a hypothesis, so once the
        # best finished score reaches the best alive one nothing can
        # overtake it.
        if finished and max(f[0] for f in finished) >= alive[0][0]:
            break
    if finished:
        score, toks = min(finished, key=lambda f: (-f[0], f[1]))
        return Hypothesis(toks, score, True)
    score, toks = alive[0]
    return Hypothesis(toks, score, False)
