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

import hashlib
import json
import traceback
from typing import List

import numpy

from .types import index_ty


# find_last_user_stacklevel gets the last stack frame index
# within birgat, so that warnings point at user code.
def find_last_user_stacklevel() -> int:
    stacklevel = 1
    for frame, _ in traceback.walk_stack(None):
        if not frame.f_globals["__name__"].startswith("birgat"):
            break
        stacklevel += 1
    return stacklevel


# derive_seeds spawns n independent, reproducible child seeds from a
# parent seed. Shard i always receives the same seed for a given parent.
def derive_seeds(seed: int, n: int) -> List[int]:
    children = numpy.random.SeedSequence(seed).spawn(n)
    return [int(c.generate_state(1, numpy.uint32)[0]) for c in children]


# fingerprint hashes a JSON-serializable object into a short stable hex id.
def fingerprint(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


# cast_index converts an arbitrary integer sequence into an index array.
def cast_index(arr) -> numpy.ndarray:
    return numpy.asarray(arr, dtype=index_ty)


# indptr_to_rows expands a CSR pos array into the row coordinate of every
# stored entry.
def indptr_to_rows(indptr) -> numpy.ndarray:
    indptr = cast_index(indptr)
    counts = numpy.diff(indptr)
    return numpy.repeat(numpy.arange(counts.shape[0], dtype=index_ty), counts)


def is_contiguous_subsequence(needle, haystack) -> bool:
    needle = list(needle)
    haystack = list(haystack)
    if not needle:
        return True
    k = len(needle)
    return any(
        haystack[i : i + k] == needle for i in range(len(haystack) - k + 1)
    )
