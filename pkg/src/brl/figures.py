"""Figure rendering for the experiment outputs."""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def heatmap_figure(rows: Sequence[dict], path: str) -> None:
    """Render the learning-frontier grid: mean test AM risk per (a, b).

    Invalid cells are left blank.
    """
    a_vals = sorted({float(r["a"]) for r in rows})
    b_vals = sorted({float(r["b"]) for r in rows})
    grid = np.full((len(a_vals), len(b_vals)), np.nan)
    for r in rows:
        i = a_vals.index(float(r["a"]))
        j = b_vals.index(float(r["b"]))
        if int(r["valid"]):
            grid[i, j] = float(r["am_mean"])
    fig, ax = plt.subplots(figsize=(6.4, 5.2))
    im = ax.imshow(
        np.ma.masked_invalid(grid),
        origin="lower",
        aspect="auto",
        cmap="viridis_r",
        vmin=0.0,
        vmax=0.5,
    )
    ax.set_xticks(range(len(b_vals)), [f"{b:g}" for b in b_vals])
    ax.set_yticks(range(len(a_vals)), [f"{a:g}" for a in a_vals])
    ax.set_xlabel("neighbour exponent b  (k = n^b)")
    ax.set_ylabel("imbalance exponent a  (p = n^-a)")
    n = int(rows[0]["n"]) if rows else 0
    ax.set_title(f"balanced k-NN mean test AM risk, n = {n}")
    fig.colorbar(im, ax=ax, label="mean AM risk")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def excess_curve_figure(rows: Sequence[dict], path: str) -> None:
    """Render mean excess balanced risk against n p on log-log axes,
    with the 10-90% band and a 1/(n p) reference through the first
    finite point."""
    pts = [
        (float(r["n"]) * float(r["p"]), float(r["excess_mean"]),
         float(r["excess_q10"]), float(r["excess_q90"]))
        for r in rows
    ]
    pts = [t for t in pts if np.isfinite(t[1])]
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    if pts:
        x = np.asarray([t[0] for t in pts])
        mean = np.asarray([t[1] for t in pts])
        lo = np.asarray([t[2] for t in pts])
        hi = np.asarray([t[3] for t in pts])
        ax.loglog(x, mean, "o-", label="mean excess")
        ax.fill_between(x, np.maximum(lo, 1e-300), hi, alpha=0.25, label="10-90%")
        anchor = mean[0] * x[0]
        ax.loglog(x, anchor / x, "--", color="tab:orange", label="1/(n p) reference")
    ax.set_xlabel("n p (expected minority count)")
    ax.set_ylabel("excess balanced risk")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
