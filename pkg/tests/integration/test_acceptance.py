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

import time
from dataclasses import replace

import numpy as np
import pytest
from utils.common import tiny_encoder

from birgat.corpus import split_corpus
from birgat.decoder import DecoderConfig
from birgat.encoder import EncoderConfig
from birgat.experiments import (
    ablation_grid,
    ablation_order_violations,
    copy_ablation_experiment,
    transfer_experiment,
    transfer_splits,
)
from birgat.generator import generate_corpus, toy_grammar, toy_ontology
from birgat.gradsuite import format_results, run_gradient_suite
from birgat.model import fit_decoder_config, target_length
from birgat.optim import TrainConfig
from birgat.settings import settings
from birgat.trainer import Trainer, build_model, evaluate, train

# Reference toy setup: 2000/250/250 samples, seed 42.
TOY_SAMPLES = 2500
TOY_SEED = 42
TOY_ACCURACY = 0.95
COPY_GAP = 0.05


def long_only():
    if not settings.long_tests():
        pytest.skip("set BIRGAT_LONG_TESTS=1 to run the acceptance runs")


@pytest.fixture(scope="module")
def ontology():
    return toy_ontology()


@pytest.fixture(scope="module")
def splits():
    samples = generate_corpus(toy_grammar(), TOY_SAMPLES, TOY_SEED)
    return split_corpus(samples, seed=TOY_SEED)


@pytest.fixture(scope="module")
def transfer_samples():
    grammar = toy_grammar(intent_counts=(1, 2, 3, 4))
    return generate_corpus(grammar, TOY_SAMPLES, TOY_SEED)


def test_toy_split_sizes(splits):
    assert [len(splits[k]) for k in ("train", "dev", "test")] == [
        2000,
        250,
        250,
    ]


def test_transfer_targets_fit_default_decoder(ontology, transfer_samples):
    assert max(s.meta.intent_count for s in transfer_samples) == 4
    default = DecoderConfig()
    for copy in (True, False):
        config = replace(default, copy=copy)
        longest = max(
            target_length(s.frame, ontology, spelled=not copy)
            for s in transfer_samples
        )
        assert longest <= default.max_len
        fitted = fit_decoder_config(config, transfer_samples, ontology)
        assert fitted.max_len == default.max_len


def test_finetune_step_on_transfer_pool(ontology, transfer_samples):
    splits = transfer_splits(transfer_samples, 3, 50, TOY_SEED)
    pool = splits["pool"]
    assert len(pool) == 50
    assert all(s.meta.intent_count == 4 for s in pool)
    model = build_model(
        ontology, splits["train"], tiny_encoder, DecoderConfig(), TOY_SEED
    )
    assert all(model.fits(s) for s in pool)
    trainer = Trainer(model, TrainConfig(seed=TOY_SEED))
    assert np.isfinite(trainer.train_step(pool))
    assert trainer.step == 1


def test_gradient_suite_is_fast_and_tight():
    long_only()
    start = time.perf_counter()
    results = run_gradient_suite(seed=0)
    assert all(r.passed for r in results), format_results(results)
    assert time.perf_counter() - start < 120.0


def test_toy_end_to_end(ontology, splits, record_property):
    long_only()
    model = build_model(
        ontology, splits["train"], EncoderConfig(), DecoderConfig(), TOY_SEED
    )
    config = TrainConfig(seed=TOY_SEED)
    train(model, splits["train"], splits["dev"], config)
    report = evaluate(model, splits["test"])
    record_property("toy_seed", TOY_SEED)
    record_property("toy_test_accuracy", report.sentence_accuracy)
    assert report.sentence_accuracy >= TOY_ACCURACY, (
        f"toy test accuracy {report.sentence_accuracy:.4f} with seed "
        f"{TOY_SEED}"
    )


def test_copy_helps_with_unseen_values(ontology, splits):
    long_only()
    report = copy_ablation_experiment(
        splits,
        ontology,
        held_out_fraction=0.3,
        train_config=TrainConfig(seed=TOY_SEED),
        seed=TOY_SEED,
    )
    assert report["gap"] >= COPY_GAP, report


def test_encoder_ablation_ordering(ontology, splits):
    long_only()
    report = ablation_grid(splits, ontology, seeds=(0, 1, 2))
    assert ablation_order_violations(report) == []


def test_few_shot_beats_zero_shot(ontology, transfer_samples):
    long_only()
    report = transfer_experiment(
        transfer_samples,
        ontology,
        train_config=TrainConfig(seed=TOY_SEED),
        seed=TOY_SEED,
    )
    assert [r["n"] for r in report["few_shot"]] == [5, 10, 20, 50]
    assert report["header"]["max_train_intents"] == 3
    largest = report["few_shot"][-1]["sentence_accuracy"]
    assert largest > report["zero_shot"]["sentence_accuracy"]


def test_runs_are_bit_identical(ontology, transfer_samples):
    long_only()
    kwargs = dict(
        encoder_config=EncoderConfig(m=32, heads=4, layers=1),
        decoder_config=DecoderConfig(beam=2),
        train_config=TrainConfig(
            total_steps=60, eval_every=30, batch_size=8, seed=3
        ),
        few_shot_sizes=(5,),
        finetune_steps=10,
        seed=3,
    )
    first = transfer_experiment(transfer_samples, ontology, **kwargs)
    second = transfer_experiment(transfer_samples, ontology, **kwargs)
    assert first == second


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main(sys.argv))
