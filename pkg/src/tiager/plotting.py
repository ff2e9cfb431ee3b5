"""Matplotlib rendering: slide overlays and evaluation report figures.

Figures are built on the object-oriented API with an Agg canvas, so
rendering never touches pyplot's global state and is safe from worker
threads.  PNG metadata is stripped so identical inputs give identical bytes.
"""

from __future__ import annotations

import os
from typing import Mapping, Sequence

import matplotlib
import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure
from matplotlib.patches import Circle

from .raster import Raster

COLORS = {
    "tumour": "#d62728",
    "stroma": "#2ca02c",
    "bulk": "#1f77b4",
    "tas": "#ff7f0e",
    "detection": "#ffd700",
}

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.2,
    "savefig.dpi": 150,
    "svg.hashsalt": "tiager",
}


def _save(fig: Figure, path, dpi=None) -> None:
    FigureCanvasAgg(fig)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fig.savefig(path, format="png", dpi=dpi, metadata={"Software": None})


def overlay_figure(thumb: Raster, tumour: Raster | None = None, stroma: Raster | None = None,
                   bulk: Raster | None = None, tas: Raster | None = None,
                   detections: Sequence = (), circle_radius_px: float = 4.0,
                   dpi: int = 100) -> Figure:
    """One figure pixel per thumbnail pixel.

    Tumour, stroma and bulk are drawn as contours, TAS as a translucent
    fill and detections as open circles.
    """
    h, w = thumb.shape
    for name, r in (("tumour", tumour), ("stroma", stroma), ("bulk", bulk), ("tas", tas)):
        if r is not None and r.shape != thumb.shape:
            raise ValueError(f"{name} mask {r.shape} does not match thumbnail {thumb.shape}")

    fig = Figure(figsize=(w / dpi, h / dpi), dpi=dpi)
    ax = fig.add_axes((0, 0, 1, 1))
    ax.set_axis_off()
    ax.imshow(thumb.pixels, cmap="gray", vmin=0.0, vmax=1.0, interpolation="nearest")

    if tas is not None and tas.pixels.any():
        rgba = np.zeros((h, w, 4))
        rgba[..., :3] = matplotlib.colors.to_rgb(COLORS["tas"])
        rgba[..., 3] = np.where(tas.pixels, 0.35, 0.0)
        ax.imshow(rgba, interpolation="nearest")
    for name, r in (("tumour", tumour), ("stroma", stroma), ("bulk", bulk)):
        if r is None:
            continue
        arr = r.pixels.astype(np.float64)
        if arr.min() == arr.max():
            continue
        ax.contour(arr, levels=[0.5], colors=[COLORS[name]], linewidths=1.0)
    for d in detections:
        # continuous pixel coordinate, pixel centres at integers
        x = d.x / thumb.mpp - thumb.origin[0] - 0.5
        y = d.y / thumb.mpp - thumb.origin[1] - 0.5
        ax.add_patch(Circle((x, y), circle_radius_px, fill=False,
                            edgecolor=COLORS["detection"], linewidth=1.0))
    ax.set_xlim(-0.5, w - 0.5)
    ax.set_ylim(h - 0.5, -0.5)
    return fig


def render_overlay(thumb: Raster, tumour, stroma, bulk, tas, detections, path,
                   circle_radius_px: float = 4.0) -> None:
    fig = overlay_figure(thumb, tumour, stroma, bulk, tas, detections, circle_radius_px)
    _save(fig, path, dpi=fig.dpi)


def froc_figure(points: Sequence[tuple[float, float]], targets: Sequence[float],
                sensitivities: Sequence[float], score: float) -> Figure:
    with matplotlib.rc_context(STYLE):
        fig = Figure(figsize=(4.0, 3.0))
        ax = fig.add_subplot()
        if points:
            fx, sy = zip(*points)
            ax.step(fx, sy, where="post", color="k", label="operating points")
        ax.plot(targets, sensitivities, "o", color=COLORS["tumour"], label="at targets")
        ax.set_xscale("symlog", linthresh=1.0)
        ax.set_xlabel("false positives per mm$^2$")
        ax.set_ylabel("sensitivity")
        ax.set_ylim(-0.02, 1.02)
        ax.set_title(f"FROC score {score:.3f}")
        ax.legend(loc="lower right", frameon=False)
        fig.tight_layout()
    return fig


def pearson_figure(xs: Sequence[float], ys: Sequence[float], r: float,
                   labels: Sequence[str] = ()) -> Figure:
    with matplotlib.rc_context(STYLE):
        fig = Figure(figsize=(3.5, 3.5))
        ax = fig.add_subplot()
        ax.scatter(xs, ys, s=12, color=COLORS["bulk"])
        for lab, x, y in zip(labels, xs, ys):
            ax.annotate(lab, (x, y), fontsize=6, xytext=(2, 2), textcoords="offset points")
        ax.plot([0, 100], [0, 100], ":", color="0.5", linewidth=0.8)
        ax.set_xlim(0, 100)
        ax.set_ylim(0, 100)
        ax.set_xlabel("reference TILs score")
        ax.set_ylabel("predicted TILs score")
        ax.set_title(f"Pearson r = {r:.3f}")
        fig.tight_layout()
    return fig


def dice_figure(per_slide: Mapping[str, tuple[float, float]]) -> Figure:
    names = list(per_slide)
    t = [per_slide[n][0] for n in names]
    s = [per_slide[n][1] for n in names]
    with matplotlib.rc_context(STYLE):
        fig = Figure(figsize=(max(3.0, 0.5 * len(names) + 1.5), 3.0))
        ax = fig.add_subplot()
        x = np.arange(len(names))
        ax.bar(x - 0.2, t, 0.4, color=COLORS["tumour"], label="tumour")
        ax.bar(x + 0.2, s, 0.4, color=COLORS["stroma"], label="stroma")
        ax.set_xticks(x, names, rotation=45, ha="right")
        ax.set_ylim(0, 1)
        ax.set_ylabel("Dice")
        ax.legend(frameon=False)
        fig.tight_layout()
    return fig


def save_figure(fig: Figure, path) -> None:
    with matplotlib.rc_context(STYLE):
        _save(fig, path)
