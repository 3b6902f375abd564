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

import os

from birgat.decoder import DecoderConfig
from birgat.encoder import EncoderConfig
from birgat.optim import TrainConfig


def prepend_path(paths):
    root = os.path.join(os.path.dirname(__file__), "..", "..", "..", "data")
    return [os.path.normpath(os.path.join(root, path)) for path in paths]


ontology_file, grammar_file = prepend_path(["ontology.yaml", "grammar.yaml"])
toy_config_file = os.path.normpath(
    os.path.join(os.path.dirname(__file__), "../../../configs/toy.yaml")
)

seeds = [0, 1, 7]

# A two-domain ontology small enough to reason about by hand.
small_ontology_doc = {
    "domains": [
        {
            "name": "map",
            "description": "maps and routes",
            "intents": [
                {
                    "name": "navigate",
                    "slots": [
                        {"name": "destination", "values": ["home", "work"]},
                        {"name": "route", "values": ["fastest"]},
                    ],
                },
                {
                    "name": "search place",
                    "slots": [{"name": "place", "values": ["coffee shop"]}],
                },
            ],
        },
        {
            "name": "music",
            "intents": [
                {
                    "name": "play song",
                    "slots": [
                        {"name": "song", "values": ["hey jude"]},
                        {"name": "artist", "values": ["queen"]},
                    ],
                },
                {"name": "next song"},
            ],
        },
    ]
}

# Encoder and decoder shapes that keep a forward pass in the millisecond
# range.
tiny_encoder = EncoderConfig(
    m=16, layers=1, heads=2, dropout=0.0, ffn_mult=2, distance_clip=4
)
tiny_decoder = DecoderConfig(copy=True, max_len=40, beam=2)
tiny_train = TrainConfig(
    lr=1e-2,
    weight_decay=0.0,
    warmup_ratio=0.1,
    batch_size=8,
    total_steps=10,
    eval_every=5,
    progress=False,
)

ablation_rows = [
    (False, "none", False),
    (True, "none", False),
    (True, "gat", False),
    (True, "gat", True),
    (True, "rgat", False),
    (True, "rgat", True),
]
