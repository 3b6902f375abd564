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
from typing import List

from .corpus import Sample, make_sample
from .errors import FrameError, SchemaError
from .frames import frame_from_dict, frame_from_text
from .ontology import Ontology
from .vocab import tokenize

log = logging.getLogger(__name__)


# load_jsonl reads an externally converted corpus where every line is a JSON
# object holding "utterance" (text or token list) and "frame" (frame text
# in the rendering format, or a name-keyed tree).
def load_jsonl(path, ont: Ontology, tokenizer: str = "word") -> List[Sample]:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                utterance = record["utterance"]
                frame = record["frame"]
            except (ValueError, KeyError, TypeError) as exc:
                raise SchemaError(lineno, f"bad record: {exc}") from None
            if isinstance(utterance, str):
                utterance = tokenize(utterance, tokenizer)
            if not utterance:
                raise SchemaError(lineno, "empty utterance")
            try:
                if isinstance(frame, str):
                    frame = frame_from_text(frame, ont)
                else:
                    frame = frame_from_dict(frame, ont)
            except FrameError as exc:
                raise SchemaError(lineno, f"bad frame: {exc}") from None
            out.append(make_sample([str(t) for t in utterance], frame))
    log.info("read %d records from %s", len(out), path)
    return out
