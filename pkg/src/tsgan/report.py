"""Figures and image grids written next to the CSV/JSON outputs."""
from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .codec import save_png  # noqa: E402

matplotlib.rcParams.update({
    "font.size": 8,
    "axes.titlesize": 9,
    "legend.fontsize": 7,
    "legend.framealpha": 0.5,
    "axes.spines.top": False,
    "axes.spines.right": False,
})


def _column(rows, key):
    xs, ys = [], []
    for r in rows:
        if r.get(key):
            xs.append(int(r["step"]))
            ys.append(float(r[key]))
    return np.array(xs), np.array(ys)


def moving_average(values: np.ndarray, window: int) -> np.ndarray:
    if len(values) < window:
        return np.array([])
    kernel = np.ones(window) / window
    return np.convolve(values, kernel, mode="valid")


def plot_trace(trace_csv: str | Path, out_png: str | Path, window: int = 50) -> Path:
    """Loss curves (with a moving average) and any evaluation metrics."""
    with open(trace_csv, newline="") as fh:
        rows = list(csv.DictReader(fh))
    fig, axes = plt.subplots(1, 3, figsize=(9, 2.6))
    for key, label in (("l_g", "$L_G$"), ("l_d", "$L_D$")):
        x, y = _column(rows, key)
        axes[0].plot(x, y, lw=0.6, alpha=0.4)
        ma = moving_average(y, min(window, max(1, len(y))))
        axes[0].plot(x[len(x) - len(ma):], ma, lw=1.2, label=label)
    axes[0].set_title("adversarial losses")
    axes[0].set_xlabel("step")
    axes[0].legend()
    for key, label in (("l_s0", "stage 1"), ("l_s1", "stage 2")):
        x, y = _column(rows, key)
        if len(y):
            ma = moving_average(y, min(window, len(y)))
            axes[1].plot(x[len(x) - len(ma):], ma, lw=1.2, label=label)
    axes[1].set_title("style loss $-\\rho$ (moving avg.)")
    axes[1].set_xlabel("step")
    axes[1].legend()
    x, y = _column(rows, "sl_eval")
    if len(y):
        axes[2].plot(x, y, "o-", ms=2, lw=1, label="SL")
        axes[2].set_ylabel("SL")
        ax2 = axes[2].twinx()
        xp, yp = _column(rows, "psnr_eval")
        ax2.plot(xp, yp, "s--", ms=2, lw=1, color="C3", label="PSNR")
        ax2.set_ylabel("PSNR [dB]")
    axes[2].set_title("evaluation")
    axes[2].set_xlabel("step")
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return Path(out_png)


def plot_styles(target: tuple[np.ndarray, np.ndarray], generated: list[tuple[np.ndarray, np.ndarray]],
                out_png: str | Path, labels: list[str] | None = None) -> Path:
    """Per-channel mu and sigma of the target against each generated stage."""
    labels = labels or [f"stage {i + 1}" for i in range(len(generated))]
    fig, axes = plt.subplots(2, 1, figsize=(6, 3.6), sharex=True)
    for ax, k, name in ((axes[0], 0, "$\\mu$"), (axes[1], 1, "$\\sigma$")):
        ch = np.arange(len(target[k]))
        ax.plot(ch, target[k], "k-", lw=1.2, label="target")
        for (style, label) in zip(generated, labels):
            ax.plot(ch, style[k], lw=0.9, label=label)
        ax.set_ylabel(name)
    axes[1].set_xlabel("channel")
    axes[0].legend(ncol=len(generated) + 1)
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return Path(out_png)


def image_grid(rows: list[list[np.ndarray]], pad: int = 2) -> np.ndarray:
    """Tile [3, H, W] images row by row with white separators."""
    h, w = rows[0][0].shape[1:]
    ncol = max(len(r) for r in rows)
    grid = np.ones((3, len(rows) * (h + pad) - pad, ncol * (w + pad) - pad), dtype=np.float32)
    for i, row in enumerate(rows):
        for j, im in enumerate(row):
            grid[:, i * (h + pad):i * (h + pad) + h, j * (w + pad):j * (w + pad) + w] = np.clip(im, 0, 1)
    return grid


def save_sample_grid(trainer, dataset, path: str | Path, count: int = 4) -> Path:
    """One row per sample: real | stage-1 | stage-2."""
    idx = np.arange(min(count, len(dataset)))
    batch, gen = trainer.generate_eval(dataset, idx)
    rows = [[batch.images[j]] + [st.image.data[j] for st in gen.stages] for j in range(len(idx))]
    save_png(image_grid(rows), path)
    return Path(path)
