"""CSV reports and the matplotlib figures written next to them."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Dict, Iterable, List, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .data import tensor_to_uint8  # noqa: E402

REPORT_FIELDS = ("dataset", "model", "metric", "value")
# arrows follow the usual table convention: lower FID, higher PSNR/SSIM is better
METRIC_LABELS = {"fid": "proxy-FID (lower is better)", "psnr": "PSNR dB (higher is better)", "ssim": "SSIM (higher is better)"}

RC = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "figure.dpi": 100,
    "savefig.bbox": "tight",
}


def write_report(rows: Iterable[Dict[str, object]], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_FIELDS)
        writer.writeheader()
        for row in rows:
            value = row["value"]
            writer.writerow({**row, "value": f"{value:.6g}" if isinstance(value, float) else value})
    return path


def read_report(path) -> List[Dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def plot_metrics(rows: Sequence[Dict[str, object]], path) -> Path:
    """One bar panel per metric, one bar per dataset."""
    metrics = list(dict.fromkeys(str(r["metric"]) for r in rows))
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, len(metrics), figsize=(3.2 * len(metrics), 2.6), squeeze=False)
        for ax, metric in zip(axes[0], metrics):
            sel = [r for r in rows if r["metric"] == metric]
            labels = [f"{r['dataset']}" for r in sel]
            values = [float(r["value"]) for r in sel]
            finite = [v if np.isfinite(v) else 0.0 for v in values]
            ax.bar(range(len(sel)), finite, color="0.35")
            ax.set_xticks(range(len(sel)))
            ax.set_xticklabels(labels, rotation=30, ha="right")
            ax.set_title(METRIC_LABELS.get(metric, metric))
            ax.spines["top"].set_visible(False)
            ax.spines["right"].set_visible(False)
        fig.savefig(path)
        plt.close(fig)
    return Path(path)


def plot_training_log(log_path, path) -> Path:
    with open(log_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    it = np.array([int(r["iteration"]) for r in rows])
    lr_cols = [k for k in rows[0] if k.startswith("lr_")] if rows else []
    with plt.rc_context(RC):
        fig, (ax, ax_lr) = plt.subplots(2, 1, figsize=(5, 4.5), sharex=True)
        for key in ("loss", "mse", "perceptual"):
            ax.plot(it, [float(r[key]) for r in rows], lw=0.8, label=key)
        ax.set_yscale("log")
        ax.set_ylabel("loss")
        ax.legend(frameon=False)
        for key in lr_cols:
            ax_lr.plot(it, [float(r[key]) for r in rows], lw=0.8, label=key[3:])
        ax_lr.set_ylabel("learning rate")
        ax_lr.set_xlabel("iteration")
        ax_lr.legend(frameon=False)
        fig.savefig(path)
        plt.close(fig)
    return Path(path)


def plot_image_grid(grid, path, row_labels=None, col_labels=None, title=None) -> Path:
    """``grid`` is ``[rows, cols, 3, H, W]`` in [-1, 1]."""
    rows, cols = grid.shape[:2]
    with plt.rc_context(RC):
        fig, axes = plt.subplots(rows, cols, figsize=(1.3 * cols, 1.3 * rows), squeeze=False)
        for r in range(rows):
            for c in range(cols):
                ax = axes[r][c]
                ax.imshow(tensor_to_uint8(grid[r, c]), interpolation="nearest")
                ax.set_xticks([])
                ax.set_yticks([])
                if col_labels is not None and r == 0:
                    ax.set_title(str(col_labels[c]))
                if row_labels is not None and c == 0:
                    ax.set_ylabel(str(row_labels[r]))
        if title:
            fig.suptitle(title)
        fig.savefig(path)
        plt.close(fig)
    return Path(path)


def plot_noise_maps(maps, path) -> Path:
    """Normalized noise maps (values in [0, 1]) in site order."""
    n = len(maps)
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, n, figsize=(1.1 * n, 1.4), squeeze=False)
        for k, (ax, m) in enumerate(zip(axes[0], maps)):
            ax.imshow(np.asarray(m), cmap="gray", vmin=0.0, vmax=1.0, interpolation="nearest")
            ax.set_title(f"site {k}\n{m.shape[-1]}px")
            ax.axis("off")
        fig.savefig(path)
        plt.close(fig)
    return Path(path)
