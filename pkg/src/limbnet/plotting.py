"""Report figures: learning curves, ROC curves and confusion matrices.

Figures are drawn on standalone ``Figure`` objects (Agg canvas), so nothing
touches pyplot's global state and no display is needed.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

TRAIN_COLOR = "tab:blue"
VAL_COLOR = "tab:red"


def _new_figure(width: float = 6.0, height: float | None = None) -> Figure:
    golden = (np.sqrt(5.0) - 1.0) / 2.0
    fig = Figure(figsize=(width, height or width * golden), dpi=120)
    FigureCanvasAgg(fig)
    return fig


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path)
    return path


def plot_learning_curves(epochs: list[dict], path) -> Path:
    """Loss (left) and accuracy (right) per epoch, training in blue, validation in red."""
    fig = _new_figure(10.0, 4.0)
    ax_loss, ax_acc = fig.subplots(1, 2)
    x = [e["epoch"] for e in epochs]
    for ax, key, label in ((ax_loss, "loss", "Loss"), (ax_acc, "accuracy", "Accuracy")):
        ax.plot(x, [e[f"train_{key}"] for e in epochs], color=TRAIN_COLOR, label="training")
        val = [e[f"val_{key}"] for e in epochs]
        if any(v is not None for v in val):
            ax.plot(x, [np.nan if v is None else v for v in val], color=VAL_COLOR,
                    label="validation")
        ax.set_xlabel("Epoch")
        ax.set_ylabel(label)
        ax.legend(frameon=False)
    ax_acc.set_ylim(0.0, 1.02)
    return _save(fig, path)


def plot_roc(curves: list[dict], class_names: list[str], path, title: str = "") -> Path:
    fig = _new_figure(5.0, 5.0)
    ax = fig.subplots()
    for c in curves:
        name = class_names[c["class"]]
        ax.plot(c["fpr"], c["tpr"], label=f"{name} (AUC = {c['auc']:.2f})")
    ax.plot([0, 1], [0, 1], color="0.6", linestyle="--", linewidth=0.8)
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.set_xlabel("False positive rate")
    ax.set_ylabel("True positive rate")
    if title:
        ax.set_title(title)
    ax.legend(loc="lower right", frameon=False, fontsize=8)
    return _save(fig, path)


def plot_confusion(counts, class_names: list[str], path, title: str = "") -> Path:
    counts = np.asarray(counts)
    fig = _new_figure(5.0, 4.5)
    ax = fig.subplots()
    im = ax.imshow(counts, cmap="Blues")
    fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
    ticks = np.arange(len(class_names))
    ax.set_xticks(ticks, class_names, rotation=30, ha="right", fontsize=8)
    ax.set_yticks(ticks, class_names, fontsize=8)
    threshold = counts.max() / 2.0 if counts.size else 0
    for i in range(counts.shape[0]):
        for j in range(counts.shape[1]):
            ax.text(j, i, str(counts[i, j]), ha="center", va="center",
                    color="white" if counts[i, j] > threshold else "black")
    ax.set_xlabel("Predicted class")
    ax.set_ylabel("True class")
    if title:
        ax.set_title(title)
    return _save(fig, path)


def render_report_figures(report: dict, out_dir) -> list[Path]:
    """Write every figure a training report supports; returns the paths written."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = [c["name"] for c in report["config"]["class_map"]]
    written = []
    if report.get("epochs"):
        written.append(plot_learning_curves(report["epochs"], out_dir / "learning_curves.png"))
    for part in ("val", "test"):
        key = f"confusion_{part}"
        if key in report:
            written.append(plot_confusion(report[key], names, out_dir / f"confusion_{part}.png",
                                          f"{part} subjects"))
        curves = [c for c in report.get("roc", []) if c.get("partition") == part]
        if curves:
            written.append(plot_roc(curves, names, out_dir / f"roc_{part}.png", f"{part} subjects"))
    return written


def render_evaluation_figures(report: dict, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = [c["name"] for c in report["config"]["class_map"]]
    part = report["partition"]
    written = [plot_confusion(report["confusion"], names, out_dir / f"confusion_{part}.png",
                              f"{part} subjects")]
    if report["roc"]:
        written.append(plot_roc(report["roc"], names, out_dir / f"roc_{part}.png",
                                f"{part} subjects"))
    return written
