"""Figures written next to the CLI's text reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from . import NAMESPACE_SHORT  # noqa: E402
from .metrics import EvalReport  # noqa: E402

# no timestamps or version strings, so reruns write identical files
_PNG_META = {"Software": None}


def _style(ax):
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    ax.tick_params(labelsize=8)


def plot_training_log(log: list[dict], path: str | Path, title: str = "") -> Path:
    path = Path(path)
    epochs = [e["epoch"] for e in log]
    fig, (ax_loss, ax_score) = plt.subplots(1, 2, figsize=(9, 3.4))
    ax_loss.plot(epochs, [e["train_loss"] for e in log], label="train")
    ax_loss.plot(epochs, [e["val_loss"] for e in log], label="validation")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("BCE loss")
    ax_loss.legend(frameon=False, fontsize=8)
    ax_score.plot(epochs, [e["val_f1"] for e in log], label="F1")
    ax_score.plot(epochs, [e["val_mcc"] for e in log], label="MCC")
    ax_score.set_xlabel("epoch")
    ax_score.set_ylabel("validation score")
    ax_score.set_ylim(-0.05, 1.05)
    ax_score.legend(frameon=False, fontsize=8)
    for ax in (ax_loss, ax_score):
        _style(ax)
    if title:
        fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_label_scores(report: EvalReport, path: str | Path) -> Path:
    """Per-label F1 and MCC bars with the micro-averaged values as reference lines."""
    path = Path(path)
    labels = report.per_label
    width = max(4.0, 0.28 * len(labels) + 1.5)
    fig, ax = plt.subplots(figsize=(width, 3.6))
    xs = range(len(labels))
    ax.bar([x - 0.2 for x in xs], [s.f1 for s in labels], width=0.4, label="F1")
    ax.bar([x + 0.2 for x in xs], [s.mcc for s in labels], width=0.4, label="MCC")
    ax.axhline(report.f1, color="C0", lw=0.8, ls="--")
    ax.axhline(report.mcc, color="C1", lw=0.8, ls="--")
    ax.axhline(0, color="0.5", lw=0.5)
    ax.set_xticks(list(xs))
    ax.set_xticklabels([s.term_id for s in labels], rotation=90, fontsize=6)
    ax.set_ylim(min(-0.05, min((s.mcc for s in labels), default=0) - 0.05), 1.05)
    short = NAMESPACE_SHORT.get(report.namespace, report.namespace)
    ax.set_title(f"{short} threshold {report.threshold:g}: micro F1 {report.f1:.3f}, "
                 f"MCC {report.mcc:.3f}", fontsize=9)
    ax.legend(frameon=False, fontsize=8)
    _style(ax)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)
    return path
