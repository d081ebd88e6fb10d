"""Report figures. Uses the object-oriented matplotlib API (no pyplot state)
and strips PNG metadata so repeated runs write identical files."""

from __future__ import annotations

from matplotlib.figure import Figure

from .metrics import MetricsReport

_PNG_META = {"Software": None}


def plot_confusion(report: MetricsReport, path, title: str = "Confusion matrix") -> None:
    fig = Figure(figsize=(4.8, 4.2))
    ax = fig.add_subplot()
    cm = report.confusion
    im = ax.imshow(cm, cmap="Blues", vmin=0)
    labels = [f"L{lv}" for lv in report.labels]
    ax.set_xticks(range(len(labels)), labels)
    ax.set_yticks(range(len(labels)), labels)
    ax.set_xlabel("Predicted level")
    ax.set_ylabel("True level")
    ax.set_title(title)
    threshold = cm.max() / 2 if cm.max() else 1
    for i in range(cm.shape[0]):
        for j in range(cm.shape[1]):
            ax.text(j, i, str(cm[i, j]), ha="center", va="center",
                    color="white" if cm[i, j] > threshold else "black", fontsize=9)
    fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)


def plot_training_curves(history, path, title: str = "Training") -> None:
    """Training loss and validation accuracy per epoch (epoch 0 = untrained)."""
    fig = Figure(figsize=(6.4, 3.6))
    ax = fig.add_subplot()
    epochs = [r.epoch for r in history if r.epoch > 0]
    ax.plot(epochs, [r.train_loss for r in history if r.epoch > 0], "o-", ms=3, label="train loss")
    if any(r.penalty for r in history if r.epoch > 0):
        ax.plot(epochs, [r.penalty for r in history if r.epoch > 0], "--", label="L2 penalty")
    ax.set_xlabel("Epoch")
    ax.set_ylabel("Loss")
    ax2 = ax.twinx()
    ax2.plot([r.epoch for r in history], [r.val_accuracy for r in history], "s-", ms=3,
             color="tab:green", label="val accuracy")
    ax2.set_ylim(0, 1.02)
    ax2.set_ylabel("Validation accuracy")
    handles = ax.get_legend_handles_labels()[0] + ax2.get_legend_handles_labels()[0]
    ax.legend(handles, [h.get_label() for h in handles], loc="center right", fontsize=8)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
