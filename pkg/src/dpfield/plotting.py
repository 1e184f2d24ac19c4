"""Figures written next to the text outputs of the CLI (PNG via matplotlib's Agg backend)."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def smooth(values, window):
    """Trailing moving average; the first ``window - 1`` entries average what is available."""
    values = np.asarray(values, dtype=np.float64)
    if window <= 1 or len(values) == 0:
        return values
    c = np.cumsum(np.concatenate([[0.0], values]))
    idx = np.arange(1, len(values) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def plot_loss_curve(steps, losses, path, window=100, title="training loss"):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(steps, losses, lw=0.5, alpha=0.35, color="tab:blue", label="per step")
    ax.plot(steps, smooth(losses, window), lw=1.5, color="tab:blue", label=f"mean of {window}")
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("noise MSE")
    ax.set_title(title)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def field_image(fld):
    """2D array (or h x w x 3) in [0, 1] that shows a field.

    Grids are shown as is, sphere fields as their (colatitude, longitude)
    raster and volumes as the maximum projection along z.
    """
    r = np.clip((fld.raster() + 1.0) / 2.0, 0.0, 1.0)
    if fld.spec.kind == "euclidean_grid_3d":
        r = r.max(axis=0)
    if r.shape[-1] == 1:
        return r[..., 0]
    return r[..., :3]


def plot_field_grid(fields, path, ncols=8, title=None):
    n = len(fields)
    ncols = max(1, min(ncols, n))
    nrows = math.ceil(n / ncols)
    fig, axes = plt.subplots(nrows, ncols, figsize=(1.3 * ncols, 1.3 * nrows + (0.3 if title else 0)),
                             squeeze=False)
    for ax in axes.flat:
        ax.axis("off")
    for ax, fld in zip(axes.flat, fields):
        img = field_image(fld)
        ax.imshow(img, cmap="gray", vmin=0.0, vmax=1.0, interpolation="nearest")
    if title:
        fig.suptitle(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_metrics(report, path):
    """Bar chart of the scalar entries of an evaluation report."""
    items = [(k, v) for k, v in report.items() if isinstance(v, (int, float)) and not isinstance(v, bool)]
    fig, ax = plt.subplots(figsize=(1.2 * max(len(items), 2) + 1, 3))
    if items:
        names, vals = zip(*items)
        ax.bar(names, vals, color="tab:gray")
        for i, v in enumerate(vals):
            ax.annotate(f"{v:.4g}", (i, v), ha="center", va="bottom", fontsize=8)
    ax.set_title("evaluation")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
