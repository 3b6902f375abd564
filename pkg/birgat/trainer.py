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

import itertools
import json
import logging
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy
from tqdm import tqdm

from .checkpoint import load_tensors, save_tensors
from .corpus import Sample
from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .errors import ConfigError, NonFiniteGradient, NonFiniteValue
from .frames import SemanticFrame, exact_match
from .model import (
    STATUS_PARSE_ERROR,
    STATUS_UNFINISHED,
    BiRGATModel,
    Prediction,
)
from .ontology import Ontology
from .optim import AdamW, TrainConfig
from .settings import settings
from .tensor import Tape
from .utils import find_last_user_stacklevel, fingerprint
from .vocab import Vocab, build_vocab

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "birgat-checkpoint"
METRICS_FILE = "metrics.jsonl"
BEST_CHECKPOINT = "best.ckpt"
LAST_CHECKPOINT = "last.ckpt"
DIVERGED_CHECKPOINT = "diverged.ckpt"


def build_model(
    ontology: Ontology,
    train_samples: Sequence[Sample],
    encoder_config: EncoderConfig = EncoderConfig(),
    decoder_config: DecoderConfig = DecoderConfig(),
    seed: int = 0,
    exclude: Sequence[str] = (),
) -> BiRGATModel:
    vocab = build_vocab(train_samples, ontology, exclude=exclude)
    return BiRGATModel(ontology, vocab, encoder_config, decoder_config, seed)


# Batching.


def epoch_batches(
    samples: Sequence[Sample], config: TrainConfig, epoch: int
) -> List[List[Sample]]:
    """The batches of one epoch. Samples are permuted with a generator
    seeded by (seed, epoch), then sorted by utterance length inside pools
    of ``bucket_batches`` batches so that batches hold similar lengths,
    and the batch order is shuffled again."""
    rng = numpy.random.default_rng([config.seed, epoch])
    order = rng.permutation(len(samples))
    pool = config.batch_size * config.bucket_batches
    batches = []
    for start in range(0, len(order), pool):
        chunk = sorted(
            order[start : start + pool],
            key=lambda i: len(samples[i].utterance),
        )
        for b in range(0, len(chunk), config.batch_size):
            picked = chunk[b : b + config.batch_size]
            batches.append([samples[i] for i in picked])
    return [batches[i] for i in rng.permutation(len(batches))]


def batch_stream(
    samples: Sequence[Sample], config: TrainConfig
) -> Iterator[List[Sample]]:
    assert samples, "no training samples"
    for epoch in itertools.count():
        yield from epoch_batches(samples, config, epoch)


# Evaluation.


@dataclass
class EvalReport:
    sentence_accuracy: float
    parse_failure_rate: float
    unfinished_rate: float
    count: int
    predictions: List[Prediction] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "sentence_accuracy": self.sentence_accuracy,
            "parse_failure_rate": self.parse_failure_rate,
            "unfinished_rate": self.unfinished_rate,
            "count": self.count,
        }


def score_predictions(
    predicted: Sequence[Optional[SemanticFrame]],
    gold: Sequence[SemanticFrame],
    statuses: Optional[Sequence[str]] = None,
) -> EvalReport:
    """Canonical exact match of predicted frames (None for a failed
    parse) against gold frames."""
    assert len(predicted) == len(gold)
    n = len(gold)
    if statuses is None:
        statuses = [
            "ok" if p is not None else STATUS_PARSE_ERROR for p in predicted
        ]
    hits = sum(exact_match(p, g) for p, g in zip(predicted, gold))
    failures = sum(s == STATUS_PARSE_ERROR for s in statuses)
    unfinished = sum(s == STATUS_UNFINISHED for s in statuses)
    return EvalReport(
        sentence_accuracy=hits / n if n else 0.0,
        parse_failure_rate=failures / n if n else 0.0,
        unfinished_rate=unfinished / n if n else 0.0,
        count=n,
    )


def predict_all(
    model: BiRGATModel,
    utterances: Sequence[Sequence[str]],
    beam: Optional[int] = None,
    workers: Optional[int] = None,
) -> List[Prediction]:
    """Decode every utterance against the frozen parameters, on
    ``workers`` threads (BIRGAT_EVAL_WORKERS by default), in input
    order."""
    workers = settings.eval_workers() if workers is None else workers
    if workers <= 1 or len(utterances) <= 1:
        return [model.predict(u, beam=beam) for u in utterances]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(
            pool.map(lambda u: model.predict(u, beam=beam), utterances)
        )


def evaluate(
    model: BiRGATModel,
    samples: Sequence[Sample],
    beam: Optional[int] = None,
    workers: Optional[int] = None,
    limit: Optional[int] = None,
) -> EvalReport:
    """Decode, parse and exact-match every sample. Predictions that fail
    to parse or never emit EOS count as non-matches."""
    if limit is not None:
        samples = samples[:limit]
    preds = predict_all(model, [s.utterance for s in samples], beam, workers)
    report = score_predictions(
        [p.frame for p in preds],
        [s.frame for s in samples],
        [p.status for p in preds],
    )
    report.predictions = preds
    return report


# Checkpoints.


@dataclass
class Checkpoint:
    model: BiRGATModel
    optimizer_state: Dict[str, numpy.ndarray]
    step: int
    train_config: Optional[TrainConfig]
    meta: dict


def model_fingerprint(model: BiRGATModel) -> str:
    return fingerprint(
        {
            "model": model.meta(),
            "ontology": model.ontology.to_document(),
        }
    )


def save_checkpoint(
    path,
    model: BiRGATModel,
    optimizer: Optional[AdamW] = None,
    train_config: Optional[TrainConfig] = None,
    extra: Optional[dict] = None,
) -> None:
    arrays = model.state_dict()
    step = 0
    if optimizer is not None:
        arrays.update(optimizer.state_dict())
        step = optimizer.step_count
    meta = {
        "format": CHECKPOINT_FORMAT,
        "step": step,
        "model": model.meta(),
        "train": None if train_config is None else train_config.to_dict(),
        "fingerprint": model_fingerprint(model),
    }
    if extra:
        meta["extra"] = extra
    save_tensors(path, arrays, meta)
    log.debug("saved checkpoint at step %d to %s", step, path)


def load_checkpoint(path, ontology: Ontology) -> Checkpoint:
    """Rebuild the model stored at ``path`` over ``ontology``; the
    ontology must be the one the model was trained with."""
    arrays, meta = load_tensors(path)
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path} is not a model checkpoint")
    doc = meta["model"]
    model = BiRGATModel(
        ontology,
        Vocab(doc["vocab"]),
        EncoderConfig(**doc["encoder"]),
        DecoderConfig(**doc["decoder"]),
        seed=int(doc["seed"]),
    )
    if model_fingerprint(model) != meta["fingerprint"]:
        raise ConfigError(
            f"{path} was trained with a different ontology or configuration"
        )
    params = {k: v for k, v in arrays.items() if not k.startswith("adam.")}
    model.load_state_dict(params)
    train = meta.get("train")
    return Checkpoint(
        model=model,
        optimizer_state={
            k: v for k, v in arrays.items() if k.startswith("adam.")
        },
        step=int(meta["step"]),
        train_config=None if train is None else TrainConfig(**train),
        meta=meta,
    )


# Training.


@dataclass
class TrainResult:
    model: BiRGATModel
    losses: List[float]
    metrics: List[dict]
    best_step: Optional[int]
    best_dev_accuracy: Optional[float]

    @property
    def final_loss(self) -> float:
        return self.losses[-1] if self.losses else float("nan")


class Trainer:
    """The optimization loop for one model. Every source of randomness
    (data order per epoch, dropout per step) is derived from the seed and
    the epoch or step number, so a run resumed from a checkpoint takes
    the same steps as an uninterrupted one."""

    def __init__(
        self,
        model: BiRGATModel,
        config: TrainConfig,
        out_dir: Optional[str] = None,
    ):
        self.model = model
        self.config = config
        self.out_dir = out_dir
        self.optimizer = AdamW(model.store, config)
        self.last_grad_norm = 0.0
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)

    @property
    def step(self) -> int:
        return self.optimizer.step_count

    def restore(self, checkpoint: Checkpoint) -> None:
        self.model.load_state_dict(checkpoint.model.state_dict())
        self.optimizer.load_state_dict(
            checkpoint.optimizer_state, checkpoint.step
        )

    def _path(self, name: str) -> Optional[str]:
        if self.out_dir is None:
            return None
        return os.path.join(self.out_dir, name)

    def save(self, name: str) -> Optional[str]:
        path = self._path(name)
        if path is not None:
            save_checkpoint(path, self.model, self.optimizer, self.config)
        return path

    def train_step(self, samples: Sequence[Sample]) -> float:
        """One teacher-forced update on ``samples``; returns the loss
        before the update. Samples whose targets exceed max_len are
        dropped with a warning."""
        batch = self.model.batch_of(self.trainable(samples))
        rng = numpy.random.default_rng([self.config.seed, self.step, 1])
        with Tape() as tape:
            loss = self.model.loss(batch, train=True, rng=rng)
            value = loss.item()
            if not numpy.isfinite(value):
                tape.release()
                path = self.save(DIVERGED_CHECKPOINT)
                raise NonFiniteValue(
                    f"loss is {value} at step {self.step + 1}"
                    + (f", state saved to {path}" if path else "")
                )
            tape.backward(loss)
        tape.release()
        try:
            self.last_grad_norm = self.optimizer.step()
        except NonFiniteGradient:
            self.model.store.zero_grad()
            self.save(DIVERGED_CHECKPOINT)
            raise
        return value

    def _append_metrics(self, record: dict) -> None:
        path = self._path(METRICS_FILE)
        if path is None:
            return
        with open(path, "a", encoding="utf-8") as f:
            f.write(json.dumps(record, sort_keys=True) + "\n")

    def trainable(self, samples: Sequence[Sample]) -> List[Sample]:
        """``samples`` without those whose targets exceed max_len."""
        kept = [s for s in samples if self.model.fits(s)]
        dropped = len(samples) - len(kept)
        if dropped:
            max_len = self.model.decoder_config.max_len
            warnings.warn(
                f"dropping {dropped} of {len(samples)} training samples "
                f"whose targets exceed max_len={max_len}",
                stacklevel=find_last_user_stacklevel(),
            )
            if not kept:
                raise ConfigError(f"no training sample fits max_len={max_len}")
        return kept

    def fit(
        self,
        train_samples: Sequence[Sample],
        dev_samples: Sequence[Sample] = (),
    ) -> TrainResult:
        """Train until ``total_steps``, evaluating on ``dev_samples`` with
        greedy decoding every ``eval_every`` steps. When a dev set is
        given the parameters with the best dev accuracy (earliest on
        ties) are restored at the end. Training samples whose targets
        exceed max_len are dropped with a warning."""
        c = self.config
        train_samples = self.trainable(train_samples)
        if self.step == 0 and self._path(METRICS_FILE):
            open(self._path(METRICS_FILE), "w").close()
        stream = itertools.islice(
            batch_stream(train_samples, c), self.step, None
        )
        progress = c.progress
        if progress is None:
            progress = sys.stderr.isatty()
        losses: List[float] = []
        metrics: List[dict] = []
        window: List[float] = []
        best_state, best_step, best_acc = None, None, None
        bar = tqdm(
            total=c.total_steps,
            initial=self.step,
            disable=not progress,
            desc="train",
        )
        try:
            while self.step < c.total_steps:
                value = self.train_step(next(stream))
                losses.append(value)
                window.append(value)
                bar.update(1)
                bar.set_postfix(loss=f"{value:.4f}")
                if self.step % c.eval_every and self.step != c.total_steps:
                    continue
                record = {
                    "step": self.step,
                    "loss": float(numpy.mean(window)),
                    "lr": self.optimizer.current_lr(),
                    "grad_norm": self.last_grad_norm,
                }
                window = []
                if dev_samples:
                    report = evaluate(
                        self.model, dev_samples, beam=1, limit=c.eval_limit
                    )
                    record["dev_accuracy"] = report.sentence_accuracy
                    record["parse_failure_rate"] = report.parse_failure_rate
                    if best_acc is None or report.sentence_accuracy > best_acc:
                        best_acc = report.sentence_accuracy
                        best_step = self.step
                        best_state = self.model.state_dict()
                        self.save(BEST_CHECKPOINT)
                log.info(
                    "step %d loss %.4f%s",
                    self.step,
                    record["loss"],
                    ""
                    if "dev_accuracy" not in record
                    else f" dev accuracy {record['dev_accuracy']:.4f}",
                )
                metrics.append(record)
                self._append_metrics(record)
        finally:
            bar.close()
        self.save(LAST_CHECKPOINT)
        if best_state is not None:
            self.model.load_state_dict(best_state)
        return TrainResult(self.model, losses, metrics, best_step, best_acc)


def train(
    model: BiRGATModel,
    train_samples: Sequence[Sample],
    dev_samples: Sequence[Sample] = (),
    config: TrainConfig = TrainConfig(),
    out_dir: Optional[str] = None,
    resume: Optional[Checkpoint] = None,
) -> TrainResult:
    trainer = Trainer(model, config, out_dir)
    if resume is not None:
        trainer.restore(resume)
    log.info(
        "training %d parameters on %d samples for %d steps",
        model.store.num_parameters(),
        len(train_samples),
        config.total_steps,
    )
    return trainer.fit(train_samples, dev_samples)


def clone_model(model: BiRGATModel) -> BiRGATModel:
    copy = BiRGATModel(
        model.ontology,
        model.vocab,
        model.encoder_config,
        model.decoder_config,
        model.seed,
    )
    copy.load_state_dict(model.state_dict())
    return copy


def intent_count_histogram(
    frames: Sequence[Optional[SemanticFrame]],
) -> Dict[str, int]:
    """Histogram of predicted intent counts, unparsed predictions under
    the key "unparsed"."""
    hist: Dict[str, int] = {}
    for f in frames:
        key = "unparsed" if f is None else str(f.intent_count)
        hist[key] = hist.get(key, 0) + 1
    return dict(sorted(hist.items()))


def summarize(reports: Sequence[Tuple[str, EvalReport]]) -> str:
    rows = [f"{'split':<10} {'accuracy':>9} {'parse-fail':>10} {'count':>6}"]
    for name, r in reports:
        rows.append(
            f"{name:<10} {r.sentence_accuracy:>9.4f} "
            f"{r.parse_failure_rate:>10.4f} {r.count:>6d}"
        )
    return "\n".join(rows)
