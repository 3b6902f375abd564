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

from dataclasses import replace

import pytest
from utils.common import (
    ablation_rows,
    small_ontology_doc,
    tiny_decoder,
    tiny_encoder,
    tiny_train,
)
from utils.sample import labeled_samples

from birgat.corpus import make_sample
from birgat.errors import InsufficientFewShotPool
from birgat.experiments import (
    ABLATION_ROWS,
    ablation_grid,
    ablation_order_violations,
    copy_ablation_experiment,
    held_out_value_tokens,
    transfer_experiment,
    transfer_splits,
)
from birgat.frames import DomainNode, IntentNode, SemanticFrame, SlotPair
from birgat.model import MAX_LEN_HEADROOM, target_length
from birgat.ontology import load_ontology

short_decoder = replace(tiny_decoder, max_len=32)
short_train = tiny_train.replace(total_steps=2, eval_every=2)


@pytest.fixture(scope="module")
def ont():
    return load_ontology(small_ontology_doc)


@pytest.fixture(scope="module")
def samples():
    return labeled_samples()


@pytest.fixture(scope="module")
def splits(samples):
    return {"train": samples, "dev": samples[:1], "test": samples[4:6]}


def test_ablation_rows_order():
    assert list(ABLATION_ROWS) == ablation_rows


def test_transfer_needs_a_pool(ont, samples):
    with pytest.raises(InsufficientFewShotPool):
        transfer_experiment(
            samples, ont, few_shot_sizes=(5,), max_train_intents=1
        )
    with pytest.raises(InsufficientFewShotPool):
        transfer_experiment(
            samples[-2:], ont, few_shot_sizes=(1,), max_train_intents=1
        )


def test_transfer_experiment(ont, samples):
    report = transfer_experiment(
        samples,
        ont,
        tiny_encoder,
        short_decoder,
        short_train,
        few_shot_sizes=(1, 0),
        max_train_intents=1,
        finetune_steps=2,
        beam=1,
    )
    header = report["header"]
    assert header["test_samples"] == 1
    assert header["train_samples"] + header["dev_samples"] == 8
    assert header["finetune_recipe"]["total_steps"] == 2
    assert [row["n"] for row in report["few_shot"]] == [0, 1]
    assert report["few_shot"][0]["sentence_accuracy"] == (
        report["zero_shot"]["sentence_accuracy"]
    )
    assert all(row["count"] == 1 for row in report["few_shot"])
    wrong = sum(report["error_intent_histogram"].values())
    assert wrong == round(1 - report["zero_shot"]["sentence_accuracy"])


def test_transfer_splits(samples):
    splits = transfer_splits(samples, max_train_intents=1, pool_size=1)
    assert len(splits["pool"]) == len(splits["test"]) == 1
    held = splits["pool"] + splits["test"]
    assert all(s.meta.intent_count == 2 for s in held)
    assert len(splits["train"]) + len(splits["dev"]) == 8
    again = transfer_splits(samples, max_train_intents=1, pool_size=1)
    for name, part in splits.items():
        assert [id(s) for s in part] == [id(s) for s in again[name]]


def test_transfer_raises_max_len_for_unseen_intent_counts(ont, samples):
    longest = max(target_length(s.frame, ont) for s in samples)
    single = max(
        target_length(s.frame, ont)
        for s in samples
        if s.meta.intent_count == 1
    )
    assert single < longest
    report = transfer_experiment(
        samples,
        ont,
        tiny_encoder,
        replace(tiny_decoder, max_len=single),
        short_train,
        few_shot_sizes=(1,),
        max_train_intents=1,
        finetune_steps=2,
        beam=1,
    )
    assert report["header"]["max_len"] == longest + MAX_LEN_HEADROOM
    assert [row["n"] for row in report["few_shot"]] == [1]


def test_ablation_grid(ont, splits):
    report = ablation_grid(
        splits,
        ont,
        tiny_encoder,
        short_decoder,
        short_train,
        seeds=(0,),
        beam=1,
    )
    rows = report["rows"]
    assert [(r["oe"], r["gnn"], r["dca"]) for r in rows] == ablation_rows
    for r in rows:
        assert len(r["accuracies"]) == 1
        assert r["mean"] == r["accuracies"][0]
        assert 0.0 <= r["mean"] <= 1.0
    assert report["header"]["seeds"] == [0]


def grid(means):
    return {
        "rows": [
            {"oe": oe, "gnn": gnn, "dca": dca, "mean": mean}
            for (oe, gnn, dca), mean in zip(ablation_rows, means)
        ]
    }


def test_ablation_order_violations():
    ordered = grid([0.1, 0.2, 0.3, 0.4, 0.5, 0.6])
    assert ablation_order_violations(ordered) == []
    # within tolerance
    assert (
        ablation_order_violations(grid([0.1, 0.2, 0.3, 0.6, 0.5, 0.597]))
        == []
    )
    found = ablation_order_violations(grid([0.3, 0.2, 0.3, 0.6, 0.5, 0.5]))
    assert len(found) == 2
    assert "gnn=rgat dca=yes" in found[0]
    assert found[1].startswith("oe=yes gnn=none dca=no")
    partial = {"rows": grid([0.5] * 6)["rows"][:2]}
    assert ablation_order_violations(partial) == []


def test_held_out_value_tokens(ont, samples):
    play = IntentNode(7, [SlotPair(8, ("song",))])
    frame = SemanticFrame([DomainNode(6, [play])])
    extra = make_sample(["play", "song"], frame)
    everything = held_out_value_tokens(samples + [extra], ont, 1.0)
    assert everything == sorted(
        ["home", "work", "fastest", "coffee", "shop", "hey", "jude", "queen"]
    )
    half = held_out_value_tokens(samples, ont, 0.5, seed=3)
    assert len(half) == 4
    assert set(half) <= set(everything)
    assert half == held_out_value_tokens(samples, ont, 0.5, seed=3)
    assert held_out_value_tokens(samples, ont, 0.0) == []


def test_copy_ablation_experiment(ont, splits):
    report = copy_ablation_experiment(
        splits,
        ont,
        tiny_encoder,
        short_decoder,
        short_train,
        held_out_fraction=0.25,
        beam=1,
    )
    assert len(report["header"]["held_out_tokens"]) == 2
    for name in ("full", "no_copy"):
        assert report[name]["count"] == 2
    assert report["gap"] == pytest.approx(
        report["full"]["sentence_accuracy"]
        - report["no_copy"]["sentence_accuracy"]
    )


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main(sys.argv))
