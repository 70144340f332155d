"""Figures for an evaluation run: reliability diagrams, ROC and PR curves."""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .aggregate import OOD_SUBSETS, SEMANTIC_SUBSETS, SUBSET_TITLES  # noqa: E402
from .errors import DegenerateCurveError  # noqa: E402
from .metrics import roc_curve  # noqa: E402


def get_plot(width=6, height=None):
    """A figure/axes pair with readable defaults."""
    golden_ratio = (5 ** 0.5 - 1.0) / 2.0
    if not height:
        height = width * golden_ratio
    fig, ax = plt.subplots(figsize=(width, height), facecolor="w")
    ax.tick_params(labelsize=width * 1.6)
    return fig, ax


def pr_curve(curve):
    """(recall, precision) vertices, one per occupied score level."""
    pos = curve.pos[::-1]
    neg = curve.neg[::-1]
    occupied = (pos + neg) > 0
    tp = np.cumsum(pos)[occupied]
    fp = np.cumsum(neg)[occupied]
    P = max(curve.n_pos, 1)
    return tp / P, tp / np.maximum(tp + fp, 1)


def reliability_diagram(cal, ax, title=""):
    B = cal.bins
    edges = np.linspace(0.0, 1.0, B + 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        acc = np.where(cal.count > 0, cal.correct / np.maximum(cal.count, 1), np.nan)
        mean_conf = np.where(cal.count > 0, cal.conf_sum / np.maximum(cal.count, 1), np.nan)
    ax.bar(edges[:-1], acc, width=1.0 / B, align="edge", edgecolor="k", alpha=0.7, label="accuracy")
    ax.plot(edges[:-1] + 0.5 / B, mean_conf, "o", color="tab:red", ms=3, label="mean confidence")
    ax.plot([0, 1], [0, 1], "--", color="gray", lw=1)
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_xlabel("confidence")
    ax.set_ylabel("accuracy")
    ax.set_title(title)
    ax.legend(loc="upper left", fontsize=8)


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def render_figures(accumulators, out_dir):
    """Write PNG figures for every subset accumulator set; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, acc in accumulators.items():
        if name in SEMANTIC_SUBSETS and acc.calibration.total:
            fig, ax = get_plot()
            reliability_diagram(acc.calibration, ax, f"{SUBSET_TITLES[name]}: reliability")
            written.append(_save(fig, out / f"reliability_{name}.png"))

    for label, key, subsets in (
        ("correct vs. incorrect", "correctness", SEMANTIC_SUBSETS),
        ("invalid pixels", "ood", OOD_SUBSETS),
    ):
        fig, (ax_roc, ax_pr) = plt.subplots(1, 2, figsize=(10, 4.5))
        drawn = False
        for name, acc in accumulators.items():
            if name not in subsets:
                continue
            curve = getattr(acc, key)
            try:
                fpr, tpr = zip(*roc_curve(curve))
            except DegenerateCurveError:
                continue
            ax_roc.plot(fpr, tpr, label=SUBSET_TITLES[name])
            recall, precision = pr_curve(curve)
            ax_pr.step(recall, precision, where="post", label=SUBSET_TITLES[name])
            drawn = True
        if not drawn:
            plt.close(fig)
            continue
        ax_roc.plot([0, 1], [0, 1], "--", color="gray", lw=1)
        ax_roc.axhline(0.95, color="gray", lw=0.5, ls=":")
        ax_roc.set_xlabel("false positive rate")
        ax_roc.set_ylabel("true positive rate")
        ax_roc.set_title(f"ROC: {label}")
        ax_pr.set_xlabel("recall")
        ax_pr.set_ylabel("precision")
        ax_pr.set_title(f"PR: {label}")
        for ax in (ax_roc, ax_pr):
            ax.set_xlim(0, 1)
            ax.set_ylim(0, 1.02)
            ax.legend(fontsize=8)
        written.append(_save(fig, out / f"curves_{key}.png"))
    return written
