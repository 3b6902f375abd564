#!/usr/bin/env python3

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

# Plots the artifacts written by the birgat experiment commands. Every
# subdirectory of data_dir holding a metrics.jsonl is one training run;
# ablation.json and transfer.json are picked up wherever they are found.

import argparse
import json
import os

import matplotlib
import matplotlib.pyplot as plt
import pandas
import seaborn

matplotlib.rcParams["pdf.fonttype"] = 42
matplotlib.rcParams["ps.fonttype"] = 42

RUN_KEY = "Run"
STEP_KEY = "Step"
LOSS_KEY = "Loss"
ACCURACY_KEY = "Exact match"
CONFIG_KEY = "Encoder"
SHOTS_KEY = "Few-shot samples"
MARKER_SIZE = 8


def find_files(root, name):
    for dirpath, _, filenames in sorted(os.walk(root)):
        if name in filenames:
            yield os.path.join(dirpath, name)


def read_metrics(filename):
    with open(filename, "r") as f:
        return [json.loads(line) for line in f if line.strip()]


def metrics_to_df(root):
    rows = []
    for filename in find_files(root, "metrics.jsonl"):
        run = os.path.relpath(os.path.dirname(filename), root)
        for record in read_metrics(filename):
            rows.append(
                (
                    run,
                    record["step"],
                    record["loss"],
                    record.get("dev_accuracy"),
                )
            )
    return pandas.DataFrame(
        rows, columns=[RUN_KEY, STEP_KEY, LOSS_KEY, ACCURACY_KEY]
    )


def ablation_to_df(filename):
    with open(filename, "r") as f:
        report = json.load(f)
    rows = []
    for row in report["rows"]:
        name = (
            f"{'OE' if row['oe'] else 'no OE'} / {row['gnn']}"
            f"{' + DCA' if row['dca'] else ''}"
        )
        # One point per seed so seaborn can draw the spread.
        rows.extend((name, acc) for acc in row["accuracies"])
    return pandas.DataFrame(rows, columns=[CONFIG_KEY, ACCURACY_KEY])


def transfer_to_df(filename):
    with open(filename, "r") as f:
        report = json.load(f)
    rows = [(0, report["zero_shot"]["sentence_accuracy"])]
    rows.extend(
        (r["n"], r["sentence_accuracy"]) for r in report["few_shot"] if r["n"]
    )
    return pandas.DataFrame(rows, columns=[SHOTS_KEY, ACCURACY_KEY])


def finish(outfile):
    fig = plt.gcf()
    fig.set_size_inches(6, 4)
    fig.tight_layout()
    if outfile is None:
        plt.show()
    else:
        plt.savefig(outfile)
        plt.clf()


def training_curves_plot(data, outfile=None):
    fig, (top, bottom) = plt.subplots(2, 1, sharex=True)
    seaborn.lineplot(data, x=STEP_KEY, y=LOSS_KEY, hue=RUN_KEY, ax=top)
    top.set_yscale("log", base=10)
    top.set_title("Training")
    dev = data.dropna(subset=[ACCURACY_KEY])
    if not dev.empty:
        seaborn.lineplot(
            dev,
            x=STEP_KEY,
            y=ACCURACY_KEY,
            hue=RUN_KEY,
            marker="o",
            markersize=MARKER_SIZE,
            ax=bottom,
            legend=False,
        )
    bottom.set_ylabel("Dev exact match")
    finish(outfile)


def ablation_plot(data, outfile=None):
    ax = seaborn.pointplot(
        data,
        x=ACCURACY_KEY,
        y=CONFIG_KEY,
        join=False,
        errorbar="sd",
    )
    ax.set_title("Encoder ablation")
    ax.set_xlabel("Test exact match (mean over seeds)")
    finish(outfile)


def transfer_plot(data, outfile=None):
    ax = seaborn.lineplot(
        data, x=SHOTS_KEY, y=ACCURACY_KEY, marker="o", markersize=MARKER_SIZE
    )
    ax.set_title("Transfer to more intents")
    ax.set_ylim(0.0, 1.0)
    finish(outfile)


parser = argparse.ArgumentParser()
parser.add_argument("data_dir", type=str)
parser.add_argument("result_dir", type=str)
args = parser.parse_args()
data_dir = args.data_dir
result_dir = args.result_dir
os.makedirs(result_dir, exist_ok=True)

curves = metrics_to_df(data_dir)
if not curves.empty:
    training_curves_plot(curves, os.path.join(result_dir, "training.pdf"))

for i, filename in enumerate(find_files(data_dir, "ablation.json")):
    ablation_plot(
        ablation_to_df(filename),
        os.path.join(result_dir, f"ablation-{i}.pdf"),
    )

for i, filename in enumerate(find_files(data_dir, "transfer.json")):
    transfer_plot(
        transfer_to_df(filename),
        os.path.join(result_dir, f"transfer-{i}.pdf"),
    )
