"""Report figures rendered straight to PNG files.

Figures are built on bare :class:`matplotlib.figure.Figure` objects with the
Agg canvas, so nothing touches pyplot's global state and repeated runs write
byte-identical files.
"""

from __future__ import annotations

import functools

import numpy as np
from matplotlib import rc_context
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .lanegeom import as_image_rows

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "lines.linewidth": 1.2,
}
ATTENTION_COLOR = "#d62728"
UNIFORM_COLOR = "#1f77b4"
GT_COLOR = "#2ca02c"


def _new_figure(width=5.0, height=3.2):
    fig = Figure(figsize=(width, height), dpi=100)
    FigureCanvasAgg(fig)
    return fig


def _styled(func):
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        with rc_context(STYLE):
            return func(*args, **kwargs)
    return wrapper


def _save(fig, path):
    fig.savefig(path, format="png", metadata={"Software": None})


@_styled
def plot_sampling(attention, uniform, image_height, path, image=None):
    """Attention (red) versus uniform (blue) sample rows in image coordinates."""
    fig = _new_figure(4.0, 4.0)
    ax = fig.add_subplot(111)
    if image is not None:
        ax.imshow(image, cmap="gray", vmin=0, vmax=255, aspect="auto",
                  extent=(0, 2, image_height, 0))
    attn = as_image_rows(attention, image_height)
    uni = np.sort(np.asarray(uniform))
    ax.scatter(np.full(len(attn), 0.6), attn, s=10, color=ATTENTION_COLOR,
               label=f"attention ({len(attn)})")
    ax.scatter(np.full(len(uni), 1.4), uni, s=10, color=UNIFORM_COLOR, label=f"uniform ({len(uni)})")
    ax.set_xlim(0, 2)
    ax.set_ylim(image_height, 0)
    ax.set_xticks([])
    ax.set_ylabel("image row")
    ax.set_title("Sample rows")
    ax.legend(loc="lower center")
    fig.tight_layout()
    _save(fig, path)


@_styled
def plot_lanes(image, gt_lanes, pred_lanes, path, title="Detected lanes"):
    """Overlay of ground-truth (green) and predicted (red) lane points."""
    h, w = image.shape[:2]
    fig = _new_figure(5.0, 5.0 * h / w + 0.6)
    ax = fig.add_subplot(111)
    ax.imshow(image, cmap="gray" if image.ndim == 2 else None, vmin=0, vmax=255)
    for i, pts in enumerate(gt_lanes):
        pts = np.asarray(pts)
        ax.plot(pts[:, 0], pts[:, 1], color=GT_COLOR, lw=2.5, alpha=0.6,
                label="ground truth" if i == 0 else None)
    for i, pts in enumerate(pred_lanes):
        pts = np.asarray(pts)
        ax.plot(pts[:, 0], pts[:, 1], "--", color=ATTENTION_COLOR,
                label="prediction" if i == 0 else None)
    ax.set_xlim(0, w)
    ax.set_ylim(h, 0)
    ax.set_axis_off()
    ax.set_title(title)
    if gt_lanes or pred_lanes:
        ax.legend(loc="upper right")
    fig.tight_layout()
    _save(fig, path)


@_styled
def plot_f1_curve(report, path):
    """F1, precision and recall against the IoU match threshold."""
    taus = [r.tau for r in report.results]
    fig = _new_figure()
    ax = fig.add_subplot(111)
    ax.plot(taus, [r.f1 for r in report.results], "o-", color="k", label="F1")
    ax.plot(taus, [r.precision for r in report.results], "s--", color=UNIFORM_COLOR,
            ms=3, label="precision")
    ax.plot(taus, [r.recall for r in report.results], "^--", color=ATTENTION_COLOR,
            ms=3, label="recall")
    ax.set_xlabel("IoU threshold")
    ax.set_ylabel("score")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title(f"mF1 = {report.mf1:.4f}")
    ax.legend(loc="lower left")
    fig.tight_layout()
    _save(fig, path)


@_styled
def plot_feature_maps(maps, names, path):
    """Side-by-side heat maps of 2-D feature slices."""
    fig = _new_figure(2.2 * len(maps), 2.0)
    for k, (m, name) in enumerate(zip(maps, names)):
        ax = fig.add_subplot(1, len(maps), k + 1)
        ax.imshow(m, cmap="magma")
        ax.set_title(name)
        ax.set_axis_off()
    fig.tight_layout()
    _save(fig, path)
