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

"""
Multi-intent spoken language understanding: ontology and semantic frame
tools, a synthetic corpus generator, and a trainable encoder-decoder
parser built on a small reverse-mode autodiff library.
"""

from .ontology import (
    ItemKind,
    Ontology,
    OntologyItem,
    RelationTable,
    RelationType,
    build_relation_table,
    domain_subset,
    load_ontology,
)
from .frames import (
    DomainNode,
    IntentNode,
    OntologyRef,
    SemanticFrame,
    Sentinel,
    SlotPair,
    Word,
    canonicalize,
    delinearize,
    exact_match,
    linearize,
)
from .corpus import Sample, load_corpus, save_corpus, split_corpus
from .generator import generate_corpus, toy_grammar, toy_ontology
from .vocab import Vocab, build_vocab
from .encoder import BiRGATEncoder, EncoderConfig
from .decoder import DecoderConfig, PointerGeneratorDecoder
from .model import BiRGATModel, Prediction
from .optim import TrainConfig
from .trainer import evaluate, load_checkpoint, save_checkpoint, train
from .settings import settings
