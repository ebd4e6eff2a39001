"""Report figures written next to the tabular output."""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# PNG metadata would otherwise carry the matplotlib version string
_SAVE = {"dpi": 100, "metadata": {"Software": None}}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    return path


def distance_histograms(before: tuple, after: tuple, path, alpha=None) -> Path:
    """Positive (red) and negative (green) pair distances before and after training."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5), sharey=False)
    for ax, (pos, neg), title in zip(axes, (before, after), ("before training", "after training")):
        both = np.concatenate([pos, neg]) if len(neg) else np.asarray(pos)
        bins = np.linspace(0.0, float(both.max()) if both.size else 1.0, 31)
        ax.hist(neg, bins=bins, color="tab:green", alpha=0.6, density=True, label="negative")
        ax.hist(pos, bins=bins, color="tab:red", alpha=0.6, density=True, label="positive")
        if alpha is not None:
            ax.axvline(alpha, color="k", lw=0.8, ls="--", label="margin")
        ax.set_title(title)
        ax.set_xlabel("squared distance")
    axes[0].legend(frameon=False)
    fig.tight_layout()
    return _save(fig, path)


def recall_curve(curves: dict, path, max_k=None) -> Path:
    """``curves`` maps a label to 1-based ranks; plots R@K in percent against K."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, ranks in sorted(curves.items()):
        ranks = np.asarray(ranks)
        top = max_k or int(ranks.max())
        ks = np.arange(1, top + 1)
        ax.plot(ks, [100.0 * np.mean(ranks <= k) for k in ks], label=label)
    ax.set_xlabel("K")
    ax.set_ylabel("R@K (%)")
    ax.set_ylim(0, 101)
    ax.legend(frameon=False)
    fig.tight_layout()
    return _save(fig, path)


def loss_curve(log: list, path) -> Path:
    """Mean training loss and validation score per snapshot."""
    pts = [e for e in log if e.get("mean_loss") is not None]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot([e["step"] for e in pts], [e["mean_loss"] for e in pts], color="tab:blue")
    ax.set_xlabel("update")
    ax.set_ylabel("mean contrastive loss", color="tab:blue")
    if pts and "val_score" in pts[0]:
        ax2 = ax.twinx()
        ax2.plot([e["step"] for e in pts], [e["val_score"] for e in pts], color="tab:orange")
        ax2.set_ylabel("validation mean aR", color="tab:orange")
    fig.tight_layout()
    return _save(fig, path)


def decoder_loss_curve(history: list, path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot([h["epoch"] for h in history], [h["mean_loss"] for h in history])
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean cross-entropy")
    ax.set_yscale("log")
    fig.tight_layout()
    return _save(fig, path)
