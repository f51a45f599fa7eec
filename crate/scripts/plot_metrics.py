#!/usr/bin/env python3
"""Plot one or more metrics.csv files.

usage: plot_metrics.py RUN_DIR_OR_CSV [...] [-o out.png]
"""
import argparse
import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

PANELS = [("recall", "recall"), ("precision", "precision"), ("T", "T"), ("grad_norm", "grad norm")]


def load(path):
    if os.path.isdir(path):
        path = os.path.join(path, "metrics.csv")
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    cols = {k: [] for k in rows[0]} if rows else {}
    for r in rows:
        for k, v in r.items():
            cols[k].append(float(v) if v not in ("", None) else float("nan"))
    return path, cols


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("runs", nargs="+")
    ap.add_argument("-o", "--out", default="metrics.png")
    args = ap.parse_args()

    fig, axes = plt.subplots(len(PANELS), 1, figsize=(8, 2.4 * len(PANELS)), sharex=True)
    for run in args.runs:
        path, cols = load(run)
        label = os.path.relpath(os.path.dirname(path) or ".")
        for ax, (key, title) in zip(axes, PANELS):
            ax.plot(cols["iter"], cols[key], label=label, lw=1)
            ax.set_ylabel(title)
    axes[-1].set_xlabel("iteration")
    axes[0].legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(args.out, dpi=120)
    print(args.out)


if __name__ == "__main__":
    main()
