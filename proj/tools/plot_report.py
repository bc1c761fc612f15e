#!/usr/bin/env python3
"""Plot the MSE-vs-time series written by `colnode report`."""

import argparse
import csv
import pathlib

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("report_dir", type=pathlib.Path)
    parser.add_argument("--out", type=pathlib.Path, default=None, help="image path (default <report_dir>/mse_vs_time.png)")
    args = parser.parse_args()

    fig, ax = plt.subplots(figsize=(7, 4))
    for path in sorted((args.report_dir / "series").glob("*.csv")):
        with path.open() as f:
            rows = [(float(r["elapsed_s"]), float(r["train_mse"])) for r in csv.DictReader(f)]
        if rows:
            t, mse = zip(*rows)
            ax.plot(t, mse, label=path.stem)
    ax.set_xlabel("wall time (s)")
    ax.set_ylabel("train MSE")
    ax.set_yscale("log")
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(args.out or args.report_dir / "mse_vs_time.png", dpi=150)


if __name__ == "__main__":
    main()
