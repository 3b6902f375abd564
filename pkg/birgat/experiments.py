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

import dataclasses
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy

from .corpus import Sample, filter_by_intent_count, split_corpus
from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .errors import InsufficientFewShotPool
from .frames import exact_match
from .model import fit_decoder_config
from .ontology import Ontology
from .optim import TrainConfig
from .trainer import (
    build_model,
    clone_model,
    evaluate,
    intent_count_histogram,
    train,
)
from .vocab import ontology_tokens

log = logging.getLogger(__name__)

FEW_SHOT_SIZES = (5, 10, 20, 50)
FINETUNE_STEPS = 200

# (ontology encoding, gnn, dual cross-attention), weakest first.
ABLATION_ROWS: Tuple[Tuple[bool, str, bool], ...] = (
    (False, "none", False),
    (True, "none", False),
    (True, "gat", False),
    (True, "gat", True),
    (True, "rgat", False),
    (True, "rgat", True),
)


def _row_name(oe: bool, gnn: str, dca: bool) -> str:
    flag = {True: "yes", False: "no"}
    return f"oe={flag[oe]} gnn={gnn} dca={flag[dca]}"


def transfer_splits(
    samples: Sequence[Sample],
    max_train_intents: int = 3,
    pool_size: int = max(FEW_SHOT_SIZES),
    seed: int = 0,
) -> Dict[str, List[Sample]]:
    """Split ``samples`` for the transfer experiment.

    Samples with at most ``max_train_intents`` intents are split 9:1 into
    "train" and "dev". The samples with more intents are permuted with
    ``seed``; the first ``pool_size`` form the fine-tuning "pool" and the
    rest the "test" set.
    """
    low = filter_by_intent_count(samples, lambda k: k <= max_train_intents)
    high = filter_by_intent_count(samples, lambda k: k > max_train_intents)
    if len(high) <= pool_size:
        raise InsufficientFewShotPool(
            f"{len(high)} samples with more than {max_train_intents} intents;"
            f" need more than {pool_size} for the pool and a test set"
        )
    if not low:
        raise InsufficientFewShotPool("no samples to train on")
    order = numpy.random.default_rng(seed).permutation(len(high))
    splits = split_corpus(low, (0.9, 0.1, 0.0), seed=seed)
    return {
        "train": splits["train"],
        "dev": splits["dev"],
        "pool": [high[i] for i in order[:pool_size]],
        "test": [high[i] for i in order[pool_size:]],
    }


def transfer_experiment(
    samples: Sequence[Sample],
    ontology: Ontology,
    encoder_config: EncoderConfig = EncoderConfig(),
    decoder_config: DecoderConfig = DecoderConfig(),
    train_config: TrainConfig = TrainConfig(),
    few_shot_sizes: Sequence[int] = FEW_SHOT_SIZES,
    max_train_intents: int = 3,
    finetune_steps: int = FINETUNE_STEPS,
    beam: Optional[int] = None,
    seed: int = 0,
) -> dict:
    """Train on samples with at most ``max_train_intents`` intents and
    measure accuracy on samples with more, first zero-shot and then after
    fine-tuning on n held-out samples for every n in ``few_shot_sizes``.

    Every n is evaluated on the same test samples (see
    ``transfer_splits``). The decoder's max_len is raised to fit the
    longest target in ``samples``, unseen intent counts included.
    """
    sizes = sorted(set(int(n) for n in few_shot_sizes))
    assert sizes and sizes[0] >= 0
    splits = transfer_splits(samples, max_train_intents, sizes[-1], seed)
    pool, test = splits["pool"], splits["test"]
    decoder_config = fit_decoder_config(decoder_config, samples, ontology)

    base = build_model(
        ontology, splits["train"], encoder_config, decoder_config, seed
    )
    train(base, splits["train"], splits["dev"], train_config)
    zero = evaluate(base, test, beam=beam)
    wrong = [
        p.frame
        for p, s in zip(zero.predictions, test)
        if not exact_match(p.frame, s.frame)
    ]
    log.info(
        "zero-shot accuracy %.4f on %d samples",
        zero.sentence_accuracy,
        len(test),
    )

    finetune_config = train_config.replace(
        total_steps=finetune_steps, eval_every=finetune_steps
    )
    few_shot = []
    for n in sizes:
        if n == 0:
            report = zero
        else:
            model = clone_model(base)
            train(model, pool[:n], (), finetune_config)
            report = evaluate(model, test, beam=beam)
        log.info("few-shot n=%d accuracy %.4f", n, report.sentence_accuracy)
        few_shot.append({"n": n, **report.to_dict()})
    return {
        "header": {
            "max_train_intents": max_train_intents,
            "max_len": decoder_config.max_len,
            "train_samples": len(splits["train"]),
            "dev_samples": len(splits["dev"]),
            "test_samples": len(test),
            "finetune_recipe": finetune_config.to_dict(),
            "seed": seed,
        },
        "zero_shot": zero.to_dict(),
        "few_shot": few_shot,
        "error_intent_histogram": intent_count_histogram(wrong),
    }


def ablation_grid(
    splits: Dict[str, List[Sample]],
    ontology: Ontology,
    encoder_config: EncoderConfig = EncoderConfig(),
    decoder_config: DecoderConfig = DecoderConfig(),
    train_config: TrainConfig = TrainConfig(),
    seeds: Sequence[int] = (0, 1, 2),
    rows: Sequence[Tuple[bool, str, bool]] = ABLATION_ROWS,
    beam: Optional[int] = None,
) -> dict:
    """Test accuracy of every encoder configuration in ``rows``, one
    training run per seed, with the mean over seeds."""
    decoder_config = fit_decoder_config(
        decoder_config, [s for v in splits.values() for s in v], ontology
    )
    report_rows = []
    for oe, gnn, dca in rows:
        enc = dataclasses.replace(encoder_config, oe=oe, gnn=gnn, dca=dca)
        accuracies = []
        for seed in seeds:
            model = build_model(
                ontology, splits["train"], enc, decoder_config, seed
            )
            train(
                model,
                splits["train"],
                splits["dev"],
                train_config.replace(seed=seed),
            )
            acc = evaluate(model, splits["test"], beam=beam).sentence_accuracy
            accuracies.append(acc)
        mean = float(numpy.mean(accuracies))
        log.info("%s: mean accuracy %.4f", _row_name(oe, gnn, dca), mean)
        report_rows.append(
            {
                "oe": oe,
                "gnn": gnn,
                "dca": dca,
                "accuracies": accuracies,
                "mean": mean,
            }
        )
    return {
        "header": {
            "encoder": encoder_config.to_dict(),
            "train": train_config.to_dict(),
            "seeds": list(seeds),
        },
        "rows": report_rows,
    }


def ablation_order_violations(
    report: dict, tolerance: float = 0.005
) -> List[str]:
    """Orderings the grid is expected to show that it does not, within
    ``tolerance``: rgat+dca >= gat+dca >= the no-gnn rows, and every
    configuration with ontology encoding at least as good as the one
    without."""
    means = {
        (r["oe"], r["gnn"], r["dca"]): r["mean"] for r in report["rows"]
    }
    expected = [
        ((True, "rgat", True), (True, "gat", True)),
        ((True, "gat", True), (True, "none", False)),
        ((True, "gat", True), (False, "none", False)),
        ((True, "none", False), (False, "none", False)),
    ]
    out = []
    for better, worse in expected:
        if better in means and worse in means:
            if means[better] + tolerance < means[worse]:
                out.append(
                    f"{_row_name(*better)} ({means[better]:.4f}) below "
                    f"{_row_name(*worse)} ({means[worse]:.4f})"
                )
    return out


def held_out_value_tokens(
    samples: Sequence[Sample],
    ontology: Ontology,
    fraction: float,
    seed: int = 0,
) -> List[str]:
    """A seeded ``fraction`` of the distinct slot-value tokens of
    ``samples``, never an ontology name token."""
    assert 0.0 <= fraction <= 1.0
    names = set(ontology_tokens(ontology))
    tokens = sorted(
        {
            tok
            for s in samples
            for value in s.frame.slot_values()
            for tok in value
        }
        - names
    )
    k = int(round(fraction * len(tokens)))
    rng = numpy.random.default_rng(seed)
    picked = rng.choice(len(tokens), size=k, replace=False) if k else []
    return sorted(tokens[i] for i in picked)


def copy_ablation_experiment(
    splits: Dict[str, List[Sample]],
    ontology: Ontology,
    encoder_config: EncoderConfig = EncoderConfig(),
    decoder_config: DecoderConfig = DecoderConfig(),
    train_config: TrainConfig = TrainConfig(),
    held_out_fraction: float = 0.3,
    beam: Optional[int] = None,
    seed: int = 0,
) -> dict:
    """Train the full model and the model without copying on the same
    splits, with ``held_out_fraction`` of the slot-value tokens removed
    from the vocabulary, and compare their test accuracy."""
    held_out = held_out_value_tokens(
        splits["train"], ontology, held_out_fraction, seed
    )
    accuracy = {}
    for name, copy in (("full", True), ("no_copy", False)):
        dec = dataclasses.replace(decoder_config, copy=copy)
        dec = fit_decoder_config(
            dec, [s for v in splits.values() for s in v], ontology
        )
        model = build_model(
            ontology,
            splits["train"],
            encoder_config,
            dec,
            seed,
            exclude=held_out,
        )
        train(model, splits["train"], splits["dev"], train_config)
        report = evaluate(model, splits["test"], beam=beam)
        accuracy[name] = report.to_dict()
        log.info("%s model accuracy %.4f", name, report.sentence_accuracy)
    return {
        "header": {
            "held_out_fraction": held_out_fraction,
            "held_out_tokens": held_out,
            "seed": seed,
        },
        "full": accuracy["full"],
        "no_copy": accuracy["no_copy"],
        "gap": accuracy["full"]["sentence_accuracy"]
        - accuracy["no_copy"]["sentence_accuracy"],
    }
