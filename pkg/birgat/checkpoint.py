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
from typing import Dict, Mapping, Tuple

import numpy

from .errors import SchemaError

MAGIC = "BIRGAT-TENSORS 1"
_DTYPE = numpy.dtype("<f8")

# Container layout:
#   MAGIC
#   {json metadata}
#   name<TAB>d0,d1,...      one line per tensor, in payload order
#   <blank line>
#   little-endian float64 payloads, concatenated in header order


def save_tensors(
    path, arrays: Mapping[str, numpy.ndarray], meta: Mapping = None
) -> None:
    header = [MAGIC, json.dumps(dict(meta or {}), sort_keys=True)]
    payloads = []
    for name, arr in arrays.items():
        assert name and not any(c in name for c in "\t\n"), name
        arr = numpy.ascontiguousarray(arr, dtype=_DTYPE)
        header.append(name + "\t" + ",".join(str(d) for d in arr.shape))
        payloads.append(arr.tobytes())
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n\n").encode("utf-8"))
        for blob in payloads:
            f.write(blob)


def _shape(text: str) -> Tuple[int, ...]:
    return tuple(int(d) for d in text.split(",")) if text else ()


def load_tensors(path) -> Tuple[Dict[str, numpy.ndarray], dict]:
    with open(path, "rb") as f:
        blob = f.read()
    end = blob.find(b"\n\n")
    if end < 0:
        raise SchemaError(1, "tensor container has no header terminator")
    lines = blob[:end].decode("utf-8").split("\n")
    if lines[0] != MAGIC:
        raise SchemaError(1, f"bad magic line {lines[0]!r}")
    if len(lines) < 2:
        raise SchemaError(2, "missing metadata line")
    try:
        meta = json.loads(lines[1])
    except json.JSONDecodeError as exc:
        raise SchemaError(2, f"bad metadata: {exc}") from None
    arrays = {}
    offset = end + 2
    for lineno, line in enumerate(lines[2:], start=3):
        name, sep, dims = line.partition("\t")
        if not sep:
            raise SchemaError(lineno, f"bad tensor header {line!r}")
        shape = _shape(dims)
        count = int(numpy.prod(shape)) if shape else 1
        nbytes = count * _DTYPE.itemsize
        if offset + nbytes > len(blob):
            raise SchemaError(lineno, f"payload of {name!r} is truncated")
        arrays[name] = (
            numpy.frombuffer(blob, dtype=_DTYPE, count=count, offset=offset)
            .reshape(shape)
            .astype(numpy.float64)
        )
        offset += nbytes
    if offset != len(blob):
        raise SchemaError(len(lines), "trailing bytes after last payload")
    return arrays, meta
