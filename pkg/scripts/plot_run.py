#!/usr/bin/env python3
"""Plot the CSV artifacts of a solve + simulate run (needs matplotlib).

    python scripts/plot_run.py out/paper-crypto
"""
import argparse
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def load(path):
    return np.genfromtxt(path, delimiter=",", names=True)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("run_dir", type=Path)
    args = p.parse_args()
    d = args.run_dir

    eta = load(d / "eta_bar.csv")
    fig, ax = plt.subplots(1, 3, figsize=(15, 4))
    ax[0].plot(eta["t"], eta["eta_bar"])
    ax[0].set(xlabel="t", ylabel="mean hash rate", title="equilibrium flow")

    wealth = load(d / "wealth_evolution.csv")
    K = int(wealth["k"].max())
    for k in np.linspace(0, K, 5).astype(int):
        sel = wealth["k"] == k
        ax[1].plot(wealth["x"][sel], wealth["density"][sel], label=f"k={k}")
    ax[1].set(xlabel="wealth", ylabel="density", title="wealth distribution")
    ax[1].legend()

    st = load(d / "stats.csv")
    ax[2].plot(st["t"], st["gini"], label="Gini")
    ax2 = ax[2].twinx()
    ax2.plot(st["t"], st["dropout_fraction"], color="tab:red", label="dropout")
    ax[2].set(xlabel="t", title="concentration")
    ax[2].legend(loc="upper left")
    ax2.legend(loc="lower right")

    fig.tight_layout()
    fig.savefig(d / "summary.png", dpi=120)
    print(d / "summary.png")


if __name__ == "__main__":
    main()
