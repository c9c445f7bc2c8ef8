"""Report artifacts: grayscale PGM snapshots, and matplotlib figures rendered
to files next to the CSV tables."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def write_pgm(values, path):
    """Binary PGM (P5), pixel = round(255 * concentration)."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError("PGM snapshot needs a 2-d field")
    h, w = values.shape
    pixels = np.rint(255.0 * np.clip(values, 0.0, 1.0)).astype(np.uint8)
    path = Path(path)
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())
    return path


def plot_concentration(values, path, title=""):
    """Heatmap panel of one concentration field."""
    fig, ax = plt.subplots(figsize=(5, 4.2))
    im = ax.imshow(np.clip(values, 0, 1), vmin=0, vmax=1, cmap="Blues_r")
    ax.set_title(title)
    ax.set_xlabel("x (cells)")
    ax.set_ylabel("y (cells)")
    fig.colorbar(im, ax=ax, label="concentration")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_metric_reports(reports, path, title="Forecast quality by period"):
    """Side-by-side MAE and SSIM curves for several named reports.

    reports: dict name -> MetricReport
    """
    fig, (ax_mae, ax_ssim) = plt.subplots(1, 2, figsize=(10, 4))
    for name, report in reports.items():
        periods = [r["period"] for r in report.rows]
        ax_mae.plot(periods, [r["mae"] for r in report.rows], marker="o", label=name)
        ax_ssim.plot(periods, [r["ssim"] for r in report.rows], marker="o", label=name)
    ax_mae.set_ylabel("MAE")
    ax_ssim.set_ylabel("SSIM")
    for ax in (ax_mae, ax_ssim):
        ax.set_xlabel("period")
        ax.tick_params(axis="x", rotation=45)
        ax.grid(alpha=0.3)
        ax.legend()
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_edge_boxplots(weekly_results, path, title="Signed ice-edge distance"):
    """Per-week boxplots of the signed point-to-contour distances."""
    data = [r.result.per_point for r in weekly_results if not r.no_edge]
    labels = [r.date.isoformat() for r in weekly_results if not r.no_edge]
    fig, ax = plt.subplots(figsize=(max(6, 0.28 * len(data) + 2), 4.5))
    if data:
        ax.boxplot(data, tick_labels=labels, showfliers=False)
        ax.axhline(0.0, color="k", lw=0.8)
    ax.set_ylabel("signed distance (cells)")
    ax.set_title(title)
    ax.tick_params(axis="x", rotation=90, labelsize=6)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
