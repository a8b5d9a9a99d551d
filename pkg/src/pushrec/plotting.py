"""Figures rendered from the evaluation and training CSV files."""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import read_csv  # noqa: E402


def plot_sweep(csv_path, out_path) -> Path:
    """Polar chart: angle = push direction, radius = magnitude, colour = success rate."""
    meta, rows = read_csv(csv_path)
    theta = np.array([float(r["direction"]) for r in rows])
    mag = np.array([float(r["magnitude"]) for r in rows])
    rate = np.array([float(r["rate"]) for r in rows])
    fig = plt.figure(figsize=(5.5, 5))
    ax = fig.add_subplot(projection="polar")
    width = 2 * math.pi / max(12, 4 * len(set(theta)))
    step = np.min(np.diff(np.unique(mag))) if len(np.unique(mag)) > 1 else mag.max()
    ax.bar(theta, np.full_like(mag, step), width=width, bottom=mag - step / 2,
           color=plt.cm.RdYlGn(rate), edgecolor="none")
    ax.set_ylim(0, mag.max() + step)
    ax.set_title(f"push success rate (friction {meta.get('friction', 'default')})", fontsize=10)
    sm = plt.cm.ScalarMappable(cmap="RdYlGn", norm=plt.Normalize(0, 1))
    fig.colorbar(sm, ax=ax, shrink=0.7, label="success rate")
    return _save(fig, out_path)


def plot_endurance(csv_path, out_path) -> Path:
    """One heatmap per link: mean pushes endured over magnitude x duration."""
    _, rows = read_csv(csv_path)
    by_link: dict[str, list[dict]] = defaultdict(list)
    for r in rows:
        by_link[r["link"]].append(r)
    links = list(by_link)
    mags = sorted({float(r["magnitude"]) for r in rows})
    durs = sorted({float(r["duration"]) for r in rows})
    fig, axes = plt.subplots(1, len(links), figsize=(3.6 * len(links), 3.4), squeeze=False)
    vmax = max(float(r["mean"]) for r in rows) or 1.0
    for ax, link in zip(axes[0], links):
        grid = np.full((len(durs), len(mags)), np.nan)
        for r in by_link[link]:
            grid[durs.index(float(r["duration"])), mags.index(float(r["magnitude"]))] = float(r["mean"])
        im = ax.imshow(grid, origin="lower", cmap="viridis", vmin=0, vmax=vmax, aspect="auto")
        for (i, j), v in np.ndenumerate(grid):
            if not np.isnan(v):
                ax.text(j, i, f"{v:.1f}", ha="center", va="center", color="w", fontsize=8)
        ax.set_xticks(range(len(mags)), [f"{m:g}" for m in mags])
        ax.set_yticks(range(len(durs)), [f"{d:g}" for d in durs])
        ax.set_xlabel("magnitude [N]")
        ax.set_title(link)
    axes[0][0].set_ylabel("duration [s]")
    fig.colorbar(im, ax=axes[0].tolist(), label="mean pushes endured")
    return _save(fig, out_path)


def plot_training(csv_path, out_path) -> Path:
    """Reward per step and mean episode duration against samples collected."""
    with open(csv_path) as fh:
        rows = list(csv.DictReader(fh))
    steps = [int(r["steps"]) for r in rows]
    fig, (a1, a2) = plt.subplots(2, 1, figsize=(6, 5), sharex=True)
    a1.plot(steps, [float(r["reward_per_step"]) for r in rows])
    a1.set_ylabel("reward / step")
    a2.plot(steps, [float(r["episode_seconds"]) for r in rows])
    a2.set_ylabel("episode [s]")
    a2.set_xlabel("samples")
    return _save(fig, out_path)


def _save(fig, out_path) -> Path:
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return out


def plot_any(csv_path, out_path=None) -> Path:
    """Pick the figure type from the CSV header."""
    csv_path = Path(csv_path)
    out_path = csv_path.with_suffix(".png") if out_path is None else out_path
    first = csv_path.read_text().split("\n", 1)[0]
    if first.startswith("#") and "sweep" in first:
        return plot_sweep(csv_path, out_path)
    if first.startswith("#") and "endurance" in first:
        return plot_endurance(csv_path, out_path)
    if first.startswith("iteration"):
        return plot_training(csv_path, out_path)
    raise ValueError(f"{csv_path}: not a sweep, endurance or metrics file")
