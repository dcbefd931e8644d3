#!/usr/bin/env python3
"""Plot the time series written by `twa run` or `twa validate`.

usage: plot.py RUN_DIR [-o figure.png]
"""

import argparse
import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def read(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return {k: [float(r[k]) for r in rows] for k in rows[0]} if rows else {}


def band(ax, t, y, se, label):
    ax.plot(t, y, label=label)
    ax.fill_between(t, [a - b for a, b in zip(y, se)], [a + b for a, b in zip(y, se)], alpha=0.3)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("run_dir", type=Path)
    ap.add_argument("-o", "--output", type=Path)
    args = ap.parse_args()
    d = args.run_dir

    panels = ["excitations", "total_rate", "squeezing"]
    if (d / "directional.csv").exists():
        panels.append("directional")
    fig, axes = plt.subplots(len(panels), 1, sharex=True, figsize=(6, 2.4 * len(panels)))

    exc = read(d / "excitations.csv")
    band(axes[0], exc["t"], exc["excitations"], exc["excitations_se"], "twa")
    axes[0].set_ylabel("excitations")
    rate = read(d / "total_rate.csv")
    band(axes[1], rate["t"], rate["total_rate"], rate["total_rate_se"], "twa")
    axes[1].set_ylabel("emission rate")
    sq = read(d / "squeezing.csv")
    axes[2].plot(sq["t"], sq["xi2"], label="twa")
    axes[2].set_ylabel("xi^2")

    if (d / "comparison.csv").exists():
        cmp = read(d / "comparison.csv")
        axes[0].plot(cmp["t"], cmp["excitations_exact"], "k--", label="exact")
        axes[1].plot(cmp["t"], cmp["total_rate_exact"], "k--", label="exact")
        axes[2].plot(cmp["t"], cmp["xi2_exact"], "k--", label="exact")

    if "directional" in panels:
        dr = read(d / "directional.csv")
        k = 0
        while f"gamma_{k}" in dr:
            band(axes[3], dr["t"], dr[f"gamma_{k}"], dr[f"gamma_{k}_se"], f"direction {k}")
            k += 1
        axes[3].set_ylabel("directional rate")

    for ax in axes:
        ax.legend(fontsize="small")
    axes[-1].set_xlabel("t")
    fig.tight_layout()
    fig.savefig(args.output or d / "plot.png", dpi=120)


if __name__ == "__main__":
    main()
