"""Figure and image rendering for the command-line report paths.

Everything draws through the Agg backend and writes PNG files with fixed
metadata, so rendering the same arrays twice gives the same bytes.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from PIL import Image

Array = np.ndarray
PathLike = Union[str, Path]

_DPI = 120
_META = {"Software": "regenedit"}


def save_image_png(path: PathLike, image: Array) -> None:
    """Write a [0, 1] grayscale array as an 8-bit PNG."""
    data = (np.clip(np.asarray(image), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(data, mode="L").save(str(path), format="PNG")


def _finish(fig, path: PathLike) -> None:
    fig.savefig(str(path), dpi=_DPI, metadata=_META)
    plt.close(fig)


def save_montage(
    images: Sequence[Array],
    path: PathLike,
    titles: Optional[Sequence[str]] = None,
    cols: int = 4,
) -> None:
    count = len(images)
    cols = max(1, min(cols, count))
    rows = (count + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(2.2 * cols, 2.4 * rows))
    axes = np.atleast_1d(axes).ravel()
    for i, ax in enumerate(axes):
        ax.set_axis_off()
        if i >= count:
            continue
        ax.imshow(images[i], cmap="gray", vmin=0.0, vmax=1.0)
        if titles is not None:
            ax.set_title(str(titles[i]), fontsize=8)
    _finish(fig, path)


def save_loss_curve(curve: Array, path: PathLike, window: int = 100) -> None:
    curve = np.asarray(curve, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(6, 3.2))
    ax.plot(curve, lw=0.6, alpha=0.45, label="per step")
    if curve.size >= window:
        kernel = np.ones(window) / window
        smooth = np.convolve(curve, kernel, mode="valid")
        ax.plot(
            np.arange(smooth.size) + window - 1,
            smooth,
            lw=1.4,
            label=f"mean over {window}",
        )
    ax.set_xlabel("step")
    ax.set_ylabel("training loss")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _finish(fig, path)


def save_edit_panel(
    panels: Sequence[Array], labels: Sequence[str], path: PathLike
) -> None:
    fig, axes = plt.subplots(1, len(panels), figsize=(2.4 * len(panels), 2.6))
    for ax, img, label in zip(np.atleast_1d(axes), panels, labels):
        ax.imshow(img, cmap="gray", vmin=0.0, vmax=1.0)
        ax.set_title(label, fontsize=9)
        ax.set_axis_off()
    _finish(fig, path)


def save_guidance_trace(
    steps: Sequence[int],
    pre: Sequence[float],
    post: Sequence[float],
    path: PathLike,
) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.2))
    ax.plot(steps, pre, lw=1.0, marker=".", ms=3, label="before update")
    ax.plot(steps, post, lw=1.0, marker=".", ms=3, label="after update")
    ax.set_xlabel("sampling step")
    ax.set_ylabel("attention match loss")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _finish(fig, path)


def save_metric_bars(
    labels: Sequence[str], values: Sequence[float], ylabel: str, path: PathLike
) -> None:
    fig, ax = plt.subplots(figsize=(1.2 * len(labels) + 2.0, 3.2))
    ax.bar(np.arange(len(labels)), values, width=0.6)
    ax.set_xticks(np.arange(len(labels)))
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    _finish(fig, path)
