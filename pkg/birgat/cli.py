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

import argparse
import json
import logging
import os
import sys
from typing import Dict, List, Optional, Sequence, Tuple

import yaml

from .config import DataConfig, RunConfig, load_run_config
from .corpus import (
    SPLITS,
    Sample,
    intent_histogram,
    load_corpus,
    save_corpus,
    split_corpus,
)
from .errors import BirgatError, CheckFailure, ConfigError, FrameError
from .experiments import (
    ablation_grid,
    copy_ablation_experiment,
    transfer_experiment,
)
from .frames import (
    frame_from_dict,
    frame_from_text,
    frame_to_dict,
    frame_to_text,
)
from .generator import (
    default_grammar,
    generate_corpus,
    load_grammar,
    toy_grammar,
    toy_ontology,
)
from .gradsuite import format_results, run_gradient_suite
from .model import STATUS_OK, fit_decoder_config
from .ontology import Ontology, load_ontology
from .settings import settings
from .trainer import (
    build_model,
    evaluate,
    load_checkpoint,
    summarize,
    train,
)
from .vocab import tokenize

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_CHECK = 3
MANIFEST = "manifest.json"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class UsageError(Exception):
    pass


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# Shared helpers.


def _overrides(args: argparse.Namespace) -> Dict[str, object]:
    names = {
        "ontology": "ontology",
        "grammar": "grammar",
        "checkpoint": "checkpoint",
        "out": "out",
        "seed": "seed",
        "train_path": "data.train",
        "dev_path": "data.dev",
        "test_path": "data.test",
        "samples": "data.samples",
        "cross_domain": "data.cross_domain",
        "max_intents": "data.max_intents",
        "intent_counts": "data.intent_counts",
        "workers": "data.workers",
        "m": "encoder.m",
        "layers": "encoder.layers",
        "heads": "encoder.heads",
        "dropout": "encoder.dropout",
        "gnn": "encoder.gnn",
        "oe": "encoder.oe",
        "dca": "encoder.dca",
        "use_descriptions": "encoder.use_descriptions",
        "copy": "decoder.copy",
        "max_len": "decoder.max_len",
        "beam": "decoder.beam",
        "steps": "train.total_steps",
        "lr": "train.lr",
        "batch_size": "train.batch_size",
        "eval_every": "train.eval_every",
        "eval_limit": "train.eval_limit",
        "few_shot_sizes": "experiments.few_shot_sizes",
        "finetune_steps": "experiments.finetune_steps",
        "held_out_fraction": "experiments.held_out_fraction",
        "grid_seeds": "experiments.seeds",
    }
    out = {}
    for attr, key in names.items():
        value = getattr(args, attr, None)
        if value is not None:
            out[key] = value
    if "seed" in out:
        out.setdefault("train.seed", out["seed"])
    return out


def run_config(args: argparse.Namespace) -> RunConfig:
    return load_run_config(getattr(args, "config", None), _overrides(args))


def load_or_toy_ontology(path: Optional[str]) -> Ontology:
    if path is None:
        return toy_ontology()
    return load_ontology(path)


def _load_splits(cfg: RunConfig, ont: Ontology) -> Dict[str, List[Sample]]:
    splits = {}
    for name in SPLITS:
        path = getattr(cfg.data, name)
        splits[name] = [] if path is None else load_corpus(path, ont)
    if not splits["train"]:
        raise UsageError("a training corpus is required (--train)")
    return splits


def _grammar(cfg: RunConfig, ont: Ontology, intent_counts=None):
    if cfg.grammar is not None:
        grammar = load_grammar(cfg.grammar, ont)
    elif cfg.ontology is None:
        grammar = toy_grammar()
    else:
        grammar = default_grammar(ont)
    knobs = {}
    if cfg.data.p_unaligned is not None:
        knobs["p_unaligned"] = cfg.data.p_unaligned
    if cfg.data.p_duplicate is not None:
        knobs["p_duplicate"] = cfg.data.p_duplicate
    counts = intent_counts or cfg.data.intent_counts
    if counts:
        knobs["intent_count_distribution"] = {
            int(c): 1.0 / len(counts) for c in counts
        }
    return grammar.with_knobs(**knobs) if knobs else grammar


def transfer_intent_counts(data: DataConfig) -> Tuple[int, ...]:
    """Intent counts to generate for the transfer experiment: the
    configured ``intent_counts``, else 1 through ``max_intents``, else 1
    through 4."""
    if data.intent_counts:
        return tuple(data.intent_counts)
    if data.max_intents is not None:
        return tuple(range(1, data.max_intents + 1))
    return (1, 2, 3, 4)


class Outputs:
    """Files written under the output directory, recorded in the
    manifest together with the invocation."""

    def __init__(self, out_dir: str, command: str, argv: Sequence[str]):
        self.dir = out_dir
        self.command = command
        self.argv = list(argv)
        self.artifacts: List[str] = []
        os.makedirs(out_dir, exist_ok=True)

    def path(self, name: str) -> str:
        if name not in self.artifacts:
            self.artifacts.append(name)
        return os.path.join(self.dir, name)

    def write_json(self, name: str, doc) -> str:
        path = self.path(name)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(doc, f, indent=2, sort_keys=True)
            f.write("\n")
        return path

    def finish(self, cfg: RunConfig) -> None:
        for name in sorted(os.listdir(self.dir)):
            if name != MANIFEST and name not in self.artifacts:
                self.artifacts.append(name)
        with open(os.path.join(self.dir, MANIFEST), "w") as f:
            json.dump(
                {
                    "command": self.command,
                    "argv": self.argv,
                    "artifacts": sorted(self.artifacts),
                    "config": cfg.to_dict(),
                },
                f,
                indent=2,
                sort_keys=True,
            )
            f.write("\n")


def _outputs(args, cfg: RunConfig) -> Outputs:
    return Outputs(cfg.out, args.command, args.argv)


# Subcommands.


def cmd_gen_data(args: argparse.Namespace) -> int:
    cfg = run_config(args)
    ont = load_or_toy_ontology(cfg.ontology)
    grammar = _grammar(cfg, ont)
    samples = generate_corpus(
        grammar,
        cfg.data.samples,
        cfg.seed,
        cross_domain=cfg.data.cross_domain,
        max_intents=cfg.data.max_intents,
        workers=cfg.data.workers,
    )
    outputs = _outputs(args, cfg)
    with open(outputs.path("ontology.yaml"), "w", encoding="utf-8") as f:
        yaml.safe_dump(ont.to_document(), f, sort_keys=False)
    splits = split_corpus(samples, cfg.data.ratios, seed=cfg.seed)
    for name, part in splits.items():
        save_corpus(outputs.path(f"{name}.tsv"), part, ont)
    outputs.write_json(
        "stats.json",
        {
            name: {"samples": len(part), "intents": intent_histogram(part)}
            for name, part in splits.items()
        },
    )
    outputs.finish(cfg)
    print(
        " ".join(f"{name}={len(part)}" for name, part in splits.items())
    )
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    cfg = run_config(args)
    ont = load_or_toy_ontology(cfg.ontology)
    splits = _load_splits(cfg, ont)
    decoder = fit_decoder_config(
        cfg.decoder, [s for part in splits.values() for s in part], ont
    )
    model = build_model(ont, splits["train"], cfg.encoder, decoder, cfg.seed)
    outputs = _outputs(args, cfg)
    result = train(
        model, splits["train"], splits["dev"], cfg.train, out_dir=cfg.out
    )
    reports = []
    for name in ("dev", "test"):
        if splits[name]:
            reports.append((name, evaluate(model, splits[name])))
    outputs.write_json(
        "report.json",
        {
            "best_step": result.best_step,
            "best_dev_accuracy": result.best_dev_accuracy,
            "final_loss": result.final_loss,
            "eval": {name: r.to_dict() for name, r in reports},
        },
    )
    outputs.finish(cfg)
    if reports:
        print(summarize(reports))
    return EXIT_OK


def _checkpoint(cfg: RunConfig, ont: Ontology):
    if cfg.checkpoint is None:
        raise UsageError("--checkpoint is required")
    return load_checkpoint(cfg.checkpoint, ont)


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = run_config(args)
    ont = load_or_toy_ontology(cfg.ontology)
    model = _checkpoint(cfg, ont).model
    reports = []
    for name in SPLITS:
        path = getattr(cfg.data, name)
        if path is not None:
            samples = load_corpus(path, ont)
            reports.append((name, evaluate(model, samples, beam=args.beam)))
    if not reports:
        raise UsageError("give at least one of --train, --dev, --test")
    print(summarize(reports))
    return EXIT_OK


def cmd_predict(args: argparse.Namespace) -> int:
    cfg = run_config(args)
    ont = load_or_toy_ontology(cfg.ontology)
    model = _checkpoint(cfg, ont).model
    for line in sys.stdin:
        words = tokenize(line.strip(), args.tokenizer)
        if not words:
            continue
        pred = model.predict(words, beam=args.beam)
        print(f"{pred.text}\t{pred.status}\t{pred.logprob:.6f}")
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    results = run_gradient_suite(seed=args.seed or 0)
    print(format_results(results))
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise CheckFailure(f"gradient check failed for {', '.join(failed)}")
    return EXIT_OK


def cmd_linearize(args: argparse.Namespace) -> int:
    """JSON frame trees (one per line) to frame text."""
    ont = load_or_toy_ontology(args.ontology)
    for lineno, line in enumerate(sys.stdin, start=1):
        if not line.strip():
            continue
        try:
            frame = frame_from_dict(json.loads(line), ont)
        except (ValueError, FrameError) as exc:
            raise FrameError(f"line {lineno}: {exc}") from None
        print(frame_to_text(frame, ont))
    return EXIT_OK


def cmd_parse(args: argparse.Namespace) -> int:
    """Frame text (one per line, as written by ``predict``) to JSON frame
    trees. Lines flagged by ``predict`` as not parsed are passed through
    with their status."""
    ont = load_or_toy_ontology(args.ontology)
    for lineno, line in enumerate(sys.stdin, start=1):
        if not line.strip():
            continue
        fields = line.rstrip("\n").split("\t")
        status = fields[1] if len(fields) > 1 else STATUS_OK
        if status != STATUS_OK:
            print(json.dumps({"status": status, "frame": None}))
            continue
        try:
            frame = frame_from_text(fields[0], ont)
        except FrameError as exc:
            raise FrameError(f"line {lineno}: {exc}") from None
        print(json.dumps(frame_to_dict(frame, ont), sort_keys=True))
    return EXIT_OK


def cmd_transfer_exp(args: argparse.Namespace) -> int:
    cfg = run_config(args)
    ont = load_or_toy_ontology(cfg.ontology)
    if cfg.data.train is not None:
        samples = load_corpus(cfg.data.train, ont)
    else:
        counts = transfer_intent_counts(cfg.data)
        samples = generate_corpus(
            _grammar(cfg, ont, counts),
            cfg.data.samples,
            cfg.seed,
            workers=cfg.data.workers,
        )
    exp = cfg.experiments
    report = transfer_experiment(
        samples,
        ont,
        cfg.encoder,
        cfg.decoder,
        cfg.train,
        few_shot_sizes=exp.few_shot_sizes,
        max_train_intents=exp.max_train_intents,
        finetune_steps=exp.finetune_steps,
        beam=exp.beam,
        seed=cfg.seed,
    )
    outputs = _outputs(args, cfg)
    outputs.write_json("transfer.json", report)
    outputs.finish(cfg)
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_ablation_grid(args: argparse.Namespace) -> int:
    cfg = run_config(args)
    ont = load_or_toy_ontology(cfg.ontology)
    report = ablation_grid(
        _load_splits(cfg, ont),
        ont,
        cfg.encoder,
        cfg.decoder,
        cfg.train,
        seeds=cfg.experiments.seeds,
        beam=cfg.experiments.beam,
    )
    outputs = _outputs(args, cfg)
    outputs.write_json("ablation.json", report)
    outputs.finish(cfg)
    for row in report["rows"]:
        print(
            f"oe={row['oe']!s:<5} gnn={row['gnn']:<4} dca={row['dca']!s:<5} "
            f"mean={row['mean']:.4f}"
        )
    return EXIT_OK


def cmd_copy_ablation(args: argparse.Namespace) -> int:
    cfg = run_config(args)
    ont = load_or_toy_ontology(cfg.ontology)
    report = copy_ablation_experiment(
        _load_splits(cfg, ont),
        ont,
        cfg.encoder,
        cfg.decoder,
        cfg.train,
        held_out_fraction=cfg.experiments.held_out_fraction,
        beam=cfg.experiments.beam,
        seed=cfg.seed,
    )
    outputs = _outputs(args, cfg)
    outputs.write_json("copy_ablation.json", report)
    outputs.finish(cfg)
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


# Parser.


def _bool_flag(parser, name: str, dest: str, help: str) -> None:
    group = parser.add_mutually_exclusive_group()
    group.add_argument(
        f"--{name}", dest=dest, action="store_const", const=True, help=help
    )
    group.add_argument(
        f"--no-{name}", dest=dest, action="store_const", const=False
    )


def _add_common(p, data=True) -> None:
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--ontology", help="ontology document (default: toy)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    if data:
        p.add_argument("--train", dest="train_path")
        p.add_argument("--dev", dest="dev_path")
        p.add_argument("--test", dest="test_path")


def _add_model(p) -> None:
    p.add_argument("--m", type=int, help="hidden size")
    p.add_argument("--layers", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--gnn", choices=("none", "gat", "rgat"))
    _bool_flag(p, "oe", "oe", "ontology encoding")
    _bool_flag(p, "dca", "dca", "dual cross-attention")
    _bool_flag(p, "copy", "copy", "copy mechanism")
    _bool_flag(p, "use-descriptions", "use_descriptions", "item descriptions")
    p.add_argument("--max-len", type=int)
    p.add_argument("--beam", type=int)
    p.add_argument("--steps", type=int, help="total training steps")
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--eval-every", type=int)
    p.add_argument("--eval-limit", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(
        prog="birgat",
        description="Multi-intent spoken language understanding with a "
        "dual relational graph attention encoder.",
    )
    parser.add_argument(
        "--log-level",
        default=None,
        help="log level (default: BIRGAT_LOG_LEVEL or WARNING)",
    )
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    _add_common(p, data=False)
    p.add_argument("--grammar", help="grammar document")
    p.add_argument("--samples", type=int)
    p.add_argument("--cross-domain", type=float)
    p.add_argument("--max-intents", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    _add_common(p)
    _add_model(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--beam", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="parse utterances from stdin")
    _add_common(p, data=False)
    p.add_argument("--checkpoint")
    p.add_argument("--beam", type=int)
    p.add_argument("--tokenizer", choices=("word", "char"), default="word")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="run the gradient check suite")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("linearize", help="JSON frames to frame text")
    p.add_argument("--ontology")
    p.set_defaults(func=cmd_linearize)

    p = sub.add_parser("parse", help="frame text to JSON frames")
    p.add_argument("--ontology")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("transfer-exp", help="intent-count transfer")
    _add_common(p)
    _add_model(p)
    p.add_argument("--grammar", help="grammar document")
    p.add_argument("--samples", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--few-shot-sizes", type=int, nargs="+")
    p.add_argument("--finetune-steps", type=int)
    p.add_argument("--max-intents", type=int)
    p.add_argument("--intent-counts", type=int, nargs="+")
    p.set_defaults(func=cmd_transfer_exp)

    p = sub.add_parser("ablation-grid", help="encoder ablation grid")
    _add_common(p)
    _add_model(p)
    p.add_argument("--grid-seeds", type=int, nargs="+")
    p.set_defaults(func=cmd_ablation_grid)

    p = sub.add_parser("copy-ablation", help="copy mechanism ablation")
    _add_common(p)
    _add_model(p)
    p.add_argument("--held-out-fraction", type=float)
    p.set_defaults(func=cmd_copy_ablation)
    return parser


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, (UsageError, ConfigError)):
        return EXIT_USAGE
    if isinstance(exc, CheckFailure):
        return EXIT_CHECK
    return EXIT_DATA


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = ["birgat"] + argv
    logging.basicConfig(
        level=(args.log_level or settings.log_level()).upper(),
        format=LOG_FORMAT,
    )
    try:
        return int(args.func(args))
    except (UsageError, BirgatError, OSError) as exc:
        print(f"birgat {args.command}: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
