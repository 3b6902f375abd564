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

# Every exception raised on purpose by birgat derives from BirgatError and
# from the builtin it refines, so callers that only know about ValueError
# and friends keep working.


class BirgatError(Exception):
    pass


class OntologyError(BirgatError, ValueError):
    pass


class MalformedDocument(OntologyError):
    pass


class OrphanItem(OntologyError):
    pass


class DuplicateName(OntologyError):
    pass


class UnknownDomain(OntologyError):
    pass


class EmptySelection(OntologyError):
    pass


class FrameError(BirgatError, ValueError):
    pass


class InvalidFrame(FrameError):
    pass


class ParseError(FrameError):
    def __init__(self, position, expected, found=None):
        self.position = position
        self.expected = expected
        self.found = found
        msg = f"parse error at token {position}: expected {expected}"
        if found is not None:
            msg += f", found {found}"
        super().__init__(msg)


class GoldContainsUnknownOntologyItem(FrameError):
    pass


class CorpusError(BirgatError, ValueError):
    pass


class DomainNotInGrammar(CorpusError):
    pass


class SameDomain(CorpusError):
    pass


class BadRatios(CorpusError):
    pass


class SchemaError(CorpusError):
    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}")


class MalformedGrammar(CorpusError):
    pass


class InsufficientFewShotPool(CorpusError):
    pass


class ShapeMismatch(BirgatError, ValueError):
    def __init__(self, op, lhs, rhs):
        self.op = op
        self.lhs = tuple(lhs)
        self.rhs = tuple(rhs)
        super().__init__(
            f"{op}: incompatible shapes {self.lhs} and {self.rhs}"
        )


class NonFiniteValue(BirgatError, ArithmeticError):
    pass


class NonFiniteGradient(NonFiniteValue):
    def __init__(self, name):
        self.name = name
        super().__init__(f"non-finite gradient for parameter {name!r}")


class EmptyNeighborhood(BirgatError, AssertionError):
    pass


class ConfigError(BirgatError, ValueError):
    pass


class CheckFailure(BirgatError):
    pass
