"""Report figures: training/validation loss curves and IoU histograms."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


def loss_curves(rows, path) -> None:
    """Two panels over epochs: RPN loss and alignment loss, train vs val."""
    epochs = [r.epoch for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5), sharex=True)
    ax1.plot(epochs, [r.train_rpn for r in rows], label="train")
    ax1.plot(epochs, [r.val_rpn for r in rows], label="val")
    ax1.set_title("RPN loss")
    ax2.plot(epochs, [r.train_align for r in rows], label="train")
    ax2.plot(epochs, [r.val_align for r in rows], label="val")
    ax2.set_title("alignment loss")
    for ax in (ax1, ax2):
        ax.set_xlabel("epoch")
        ax.legend()
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def iou_histogram_figure(hist: dict, title: str, path) -> None:
    edges = hist["bin_edges"]
    counts = hist["counts"]
    widths = [hi - lo for lo, hi in zip(edges[:-1], edges[1:])]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar(edges[:-1], counts, width=widths, align="edge", edgecolor="black")
    ax.set_xlabel("IoU of matched pairs")
    ax.set_ylabel("count")
    ax.set_title(title)
    ax.set_xlim(0.0, 1.0)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
