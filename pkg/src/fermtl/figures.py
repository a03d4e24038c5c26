"""Report figures rendered to files next to the csv/text outputs."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .constants import EXPRESSIONS

plt.rcParams.update({"figure.dpi": 110, "font.size": 9})


def save_training_curves(log, path):
    """Loss curves and validation macro F1 over epochs, one PNG."""
    epochs = [r.epoch for r in log.rows]
    fig, (ax_loss, ax_f1) = plt.subplots(1, 2, figsize=(9, 3.4))
    ax_loss.plot(epochs, [r.expr_loss for r in log.rows], label="expression")
    ax_loss.plot(epochs, [r.land_loss for r in log.rows], label="landmarks")
    ax_loss.plot(epochs, [r.joint_loss for r in log.rows], label="joint", linestyle="--")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("training loss")
    ax_loss.legend()
    ax_f1.plot(epochs, [r.val_macro_f1 for r in log.rows], color="tab:green")
    ax_f1.set_xlabel("epoch")
    ax_f1.set_ylabel("validation macro F1")
    ax_f1.set_ylim(0.0, 1.02)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_confusion_matrix(cm, path):
    """Heatmap of the 6x6 confusion matrix with per-cell counts."""
    counts = np.asarray(cm.counts)
    fig, ax = plt.subplots(figsize=(4.6, 4.2))
    im = ax.imshow(counts, cmap="Blues")
    ax.set_xticks(range(len(EXPRESSIONS)), EXPRESSIONS, rotation=45, ha="right")
    ax.set_yticks(range(len(EXPRESSIONS)), EXPRESSIONS)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    threshold = counts.max() / 2 if counts.max() else 0.5
    for i in range(counts.shape[0]):
        for j in range(counts.shape[1]):
            color = "white" if counts[i, j] > threshold else "black"
            ax.text(j, i, str(counts[i, j]), ha="center", va="center", color=color)
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_f1_bars(report, path):
    """Per-class F1 bars with the macro mean as a reference line."""
    fig, ax = plt.subplots(figsize=(5.2, 3.2))
    ax.bar(EXPRESSIONS, report.per_class_f1, color="tab:blue")
    ax.axhline(report.macro_f1, color="tab:red", linestyle="--", label=f"macro F1 = {report.macro_f1:.3f}")
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("F1")
    ax.tick_params(axis="x", rotation=30)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
