"""PNG figures for pipeline reports.

Figures are built on ``matplotlib.figure.Figure`` with the Agg canvas, so no
GUI backend or pyplot global state is involved. PNG metadata is stripped
so repeated runs write identical bytes.
"""

from __future__ import annotations

import os
from typing import Mapping, Sequence

import matplotlib
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure
from matplotlib.ticker import MaxNLocator

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}
FIGSIZE = (6.0, 3.4)
DPI = 100


def _new(nrows=1, ncols=1, figsize=FIGSIZE):
    fig = Figure(figsize=figsize, dpi=DPI)
    FigureCanvasAgg(fig)
    axes = fig.subplots(nrows, ncols, squeeze=False)
    return fig, axes


def _save(fig: Figure, path: str | os.PathLike) -> None:
    fig.tight_layout()
    fig.savefig(path, format="png", dpi=DPI, metadata={"Software": None})


def training_history(history: Mapping[str, Sequence[float]], path, title: str = "") -> None:
    """Loss and accuracy per epoch, training vs validation."""
    with matplotlib.rc_context(STYLE):
        fig, axes = _new(1, 2)
        loss_ax, acc_ax = axes[0]
        epochs = range(1, len(history["loss"]) + 1)
        loss_ax.plot(epochs, history["loss"], label="train")
        if history.get("val_loss"):
            loss_ax.plot(epochs, history["val_loss"], label="validation")
        loss_ax.set_xlabel("epoch")
        loss_ax.set_ylabel("loss")
        loss_ax.legend(frameon=False)
        if history.get("accuracy"):
            acc_ax.plot(epochs, history["accuracy"], label="train")
            acc_ax.plot(epochs, history["val_accuracy"], label="validation")
            acc_ax.set_ylim(0.0, 1.02)
            acc_ax.set_ylabel("accuracy")
            acc_ax.legend(frameon=False)
        acc_ax.set_xlabel("epoch")
        for ax in (loss_ax, acc_ax):
            ax.xaxis.set_major_locator(MaxNLocator(integer=True))
        if title:
            fig.suptitle(title)
        _save(fig, path)


def attack_losses(curves: Mapping[str, Mapping[str, Sequence[float]]], path) -> None:
    """Validation MSE per epoch for each trained attack model."""
    with matplotlib.rc_context(STYLE):
        fig, axes = _new()
        ax = axes[0, 0]
        for mode, hist in sorted(curves.items()):
            series = hist.get("val_loss") or hist["loss"]
            ax.plot(range(1, len(series) + 1), series, label=mode.replace("_", " "))
        ax.set_yscale("log")
        ax.xaxis.set_major_locator(MaxNLocator(integer=True))
        ax.set_xlabel("epoch")
        ax.set_ylabel("validation MSE")
        ax.legend(frameon=False)
        _save(fig, path)


def pass_fractions(per_profile: Mapping[str, float], path, title: str = "") -> None:
    """One bar per victim profile: fraction of features passing the KS test."""
    with matplotlib.rc_context(STYLE):
        fig, axes = _new()
        ax = axes[0, 0]
        users = sorted(per_profile)
        ax.bar(range(len(users)), [100.0 * per_profile[u] for u in users], color="0.35")
        ax.set_xticks(range(len(users)))
        ax.set_xticklabels(users, rotation=90)
        ax.set_ylim(0.0, 100.0)
        ax.set_xlabel("profile")
        ax.set_ylabel("features recovered (%)")
        if title:
            ax.set_title(title)
        _save(fig, path)


def rate_bars(rates: Sequence[tuple[str, float]], path, title: str = "") -> None:
    """Horizontal bars for a handful of named rates in [0, 1]."""
    with matplotlib.rc_context(STYLE):
        fig, axes = _new(figsize=(6.0, 0.45 * len(rates) + 1.2))
        ax = axes[0, 0]
        labels = [name for name, _ in rates]
        ax.barh(range(len(rates)), [v for _, v in rates], color="0.35")
        ax.set_yticks(range(len(rates)))
        ax.set_yticklabels(labels)
        ax.invert_yaxis()
        ax.set_xlim(0.0, 1.0)
        ax.set_xlabel("rate")
        if title:
            ax.set_title(title)
        _save(fig, path)
