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

import io
import json
import os

import pytest

from birgat import cli
from birgat.config import DataConfig
from birgat.corpus import load_corpus
from birgat.frames import frame_to_dict
from birgat.generator import generate_corpus, toy_grammar, toy_ontology
from birgat.ontology import load_ontology
from birgat.settings import settings
from birgat.trainer import load_checkpoint


@pytest.fixture(scope="module")
def toy():
    return toy_ontology()


def feed(monkeypatch, text):
    monkeypatch.setattr("sys.stdin", io.StringIO(text))


def output_lines(capsys):
    return [line for line in capsys.readouterr().out.splitlines() if line]


def test_linearize_then_parse(toy, monkeypatch, capsys):
    samples = generate_corpus(toy_grammar(), 12, 4, cross_domain=0.25)
    trees = [frame_to_dict(s.frame, toy) for s in samples]
    feed(monkeypatch, "".join(json.dumps(t) + "\n" for t in trees))
    assert cli.main(["linearize"]) == cli.EXIT_OK
    texts = output_lines(capsys)
    assert len(texts) == len(trees)
    feed(monkeypatch, "\n".join(texts) + "\n")
    assert cli.main(["parse"]) == cli.EXIT_OK
    parsed = [json.loads(line) for line in output_lines(capsys)]
    assert parsed == trees


def test_parse_passes_failed_predictions(monkeypatch, capsys):
    feed(monkeypatch, "[ ( navigate\tparse-error\t-3.5\n")
    assert cli.main(["parse"]) == cli.EXIT_OK
    (line,) = output_lines(capsys)
    assert json.loads(line) == {"status": "parse-error", "frame": None}


@pytest.mark.parametrize(
    "command, text",
    [
        ("parse", "[ ( ]\n"),
        ("parse", "[ @999:domain:atlantis ]\n"),
        ("linearize", "{not json\n"),
        ("linearize", '{"domains": [{"domain": "atlantis"}]}\n'),
    ],
)
def test_malformed_input_exits_with_data_error(
    command, text, monkeypatch, capsys
):
    feed(monkeypatch, text)
    assert cli.main([command]) == cli.EXIT_DATA
    assert "line 1" in capsys.readouterr().err


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["train", "--bogus"],
        ["train", "--gnn", "gcn"],
        ["train", "--oe", "--no-oe"],
        ["frobnicate"],
    ],
)
def test_usage_errors(argv):
    with pytest.raises(SystemExit) as exc:
        cli.main(argv)
    assert exc.value.code == cli.EXIT_USAGE


def test_missing_inputs(tmp_path, capsys):
    assert cli.main(["train", "--out", str(tmp_path)]) == cli.EXIT_USAGE
    assert "--train" in capsys.readouterr().err
    corpus = tmp_path / "test.tsv"
    corpus.write_text("")
    assert cli.main(["eval", "--test", str(corpus)]) == cli.EXIT_USAGE
    assert "--checkpoint" in capsys.readouterr().err


def test_bad_config_file(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("encoder: {width: 3}\n")
    argv = ["gen-data", "--config", str(path), "--out", str(tmp_path)]
    assert cli.main(argv) == cli.EXIT_USAGE


def test_flags_reach_the_configuration():
    args = cli.build_parser().parse_args(
        [
            "ablation-grid",
            "--seed",
            "4",
            "--grid-seeds",
            "0",
            "1",
            "--no-dca",
            "--steps",
            "12",
            "--max-len",
            "20",
        ]
    )
    cfg = cli.run_config(args)
    assert cfg.seed == 4 and cfg.train.seed == 4
    assert cfg.experiments.seeds == (0, 1)
    assert cfg.encoder.dca is False and cfg.encoder.oe is True
    assert cfg.train.total_steps == 12
    assert cfg.decoder.max_len == 20


def test_transfer_flags_reach_the_configuration():
    argv = ["transfer-exp", "--max-intents", "5", "--intent-counts", "1", "5"]
    cfg = cli.run_config(cli.build_parser().parse_args(argv))
    assert cfg.data.max_intents == 5
    assert cfg.data.intent_counts == (1, 5)


@pytest.mark.parametrize(
    "data, counts",
    [
        ({}, (1, 2, 3, 4)),
        ({"max_intents": 5}, (1, 2, 3, 4, 5)),
        ({"max_intents": 2}, (1, 2)),
        ({"max_intents": 5, "intent_counts": [2, 4]}, (2, 4)),
    ],
)
def test_transfer_intent_counts(data, counts):
    assert cli.transfer_intent_counts(DataConfig(**data)) == counts


def gen_data(out, samples=20):
    argv = ["gen-data", "--out", out, "--samples", str(samples), "--seed", "1"]
    return cli.main(argv)


def test_gen_data(tmp_path, toy, capsys):
    out = str(tmp_path / "data")
    assert gen_data(out) == cli.EXIT_OK
    assert capsys.readouterr().out.split() == ["train=16", "dev=2", "test=2"]
    with open(os.path.join(out, cli.MANIFEST)) as f:
        manifest = json.load(f)
    assert manifest["command"] == "gen-data"
    assert manifest["artifacts"] == sorted(
        ["dev.tsv", "ontology.yaml", "stats.json", "test.tsv", "train.tsv"]
    )
    assert manifest["config"]["data"]["samples"] == 20
    assert load_ontology(os.path.join(out, "ontology.yaml")) == toy
    train = load_corpus(os.path.join(out, "train.tsv"), toy)
    assert len(train) == 16
    with open(os.path.join(out, "stats.json")) as f:
        stats = json.load(f)
    assert stats["train"]["samples"] == 16
    # same seed, same corpus
    again = str(tmp_path / "again")
    assert gen_data(again) == cli.EXIT_OK
    for name in ("train.tsv", "dev.tsv", "test.tsv"):
        with open(os.path.join(out, name)) as a:
            with open(os.path.join(again, name)) as b:
                assert a.read() == b.read()


def test_train_then_predict(tmp_path, monkeypatch, capsys):
    data = str(tmp_path / "data")
    assert gen_data(data) == cli.EXIT_OK
    run = str(tmp_path / "run")
    argv = [
        "train",
        "--train",
        os.path.join(data, "train.tsv"),
        "--dev",
        os.path.join(data, "dev.tsv"),
        "--out",
        run,
        "--m",
        "16",
        "--heads",
        "2",
        "--layers",
        "1",
        "--steps",
        "4",
        "--eval-every",
        "2",
        "--batch-size",
        "8",
        "--beam",
        "1",
    ]
    assert cli.main(argv) == cli.EXIT_OK
    capsys.readouterr()
    for name in ("report.json", "metrics.jsonl", "last.ckpt", "best.ckpt"):
        assert os.path.exists(os.path.join(run, name))
    with open(os.path.join(run, "report.json")) as f:
        report = json.load(f)
    assert report["best_step"] in (2, 4)
    assert report["eval"]["dev"]["count"] == 2

    checkpoint = os.path.join(run, "last.ckpt")
    feed(monkeypatch, "navigate destination the airport\n\nplay song\n")
    argv = ["predict", "--checkpoint", checkpoint, "--beam", "1"]
    assert cli.main(argv) == cli.EXIT_OK
    lines = output_lines(capsys)
    assert len(lines) == 2
    for line in lines:
        text, status, logprob = line.split("\t")
        assert status in ("ok", "parse-error", "unfinished")
        assert float(logprob) <= 0.0

    argv = ["eval", "--checkpoint", checkpoint, "--test"]
    argv += [os.path.join(data, "test.tsv"), "--beam", "1"]
    assert cli.main(argv) == cli.EXIT_OK
    rows = output_lines(capsys)
    assert rows[1].split()[0] == "test"
    assert rows[1].split()[-1] == "2"


def test_train_raises_max_len_to_fit_the_corpus(tmp_path, toy, capsys):
    data = str(tmp_path / "data")
    assert gen_data(data) == cli.EXIT_OK
    run = str(tmp_path / "run")
    argv = ["train", "--train", os.path.join(data, "train.tsv")]
    argv += ["--out", run, "--m", "16", "--heads", "2", "--layers", "1"]
    argv += ["--steps", "2", "--eval-every", "2", "--max-len", "4"]
    assert cli.main(argv) == cli.EXIT_OK
    capsys.readouterr()
    ckpt = load_checkpoint(os.path.join(run, "last.ckpt"), toy)
    samples = load_corpus(os.path.join(data, "train.tsv"), toy)
    assert ckpt.model.decoder_config.max_len > 4
    assert all(ckpt.model.fits(s) for s in samples)


def test_gradcheck_command(capsys):
    if not settings.long_tests():
        pytest.skip("set BIRGAT_LONG_TESTS=1 to run the whole suite")
    assert cli.main(["gradcheck"]) == cli.EXIT_OK
    assert "full_model" in capsys.readouterr().out


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main(sys.argv))
