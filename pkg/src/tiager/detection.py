"""From a TIL probability map to point detections."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage as ndi
from scipy.spatial import cKDTree

from .errors import InvalidInputError
from .raster import Raster, Resolution, disk, mask


@dataclass(frozen=True)
class Detection:
    x: float  # microns, base-slide frame
    y: float
    confidence: float

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise InvalidInputError(f"confidence must be in [0, 1], got {self.confidence}")
        if not (self.x >= 0 and self.y >= 0) or not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise InvalidInputError(f"detection coordinates must be finite and >= 0, got ({self.x}, {self.y})")


@dataclass(frozen=True, eq=False)
class Component:
    rows: np.ndarray
    cols: np.ndarray
    centroid: tuple[float, float]  # (x, y) in pixels, pixel centres at integers
    bbox: tuple[int, int, int, int]  # min_x, min_y, max_x, max_y (inclusive)
    mean_prob: float | None = None

    @property
    def area(self) -> int:
        return int(self.rows.size)


_STRUCTURES = {
    4: ndi.generate_binary_structure(2, 1),
    8: ndi.generate_binary_structure(2, 2),
}


def label(raster: Raster, connectivity: int = 8) -> tuple[np.ndarray, int]:
    if connectivity not in _STRUCTURES:
        raise InvalidInputError(f"connectivity must be 4 or 8, got {connectivity}")
    if not raster.is_binary():
        raise InvalidInputError("connected components need a binary mask")
    return ndi.label(raster.pixels.astype(bool), structure=_STRUCTURES[connectivity])


def connected_components(raster: Raster, connectivity: int = 8,
                         prob: Raster | None = None) -> list[Component]:
    """Maximal connected foreground sets, sorted by (min_y, min_x).

    Passing ``prob`` fills in each component's mean probability.
    """
    labels, n = label(raster, connectivity)
    if n == 0:
        return []
    rows, cols = np.nonzero(labels)
    ids = labels[rows, cols]
    order = np.argsort(ids, kind="stable")
    rows, cols, ids = rows[order], cols[order], ids[order]
    bounds = np.flatnonzero(np.diff(ids)) + 1
    comps = []
    probs = prob.pixels if prob is not None else None
    for r, c in zip(np.split(rows, bounds), np.split(cols, bounds)):
        mean_prob = float(probs[r, c].mean()) if probs is not None else None
        comps.append(Component(
            rows=r, cols=c,
            centroid=(float(c.mean()), float(r.mean())),
            bbox=(int(c.min()), int(r.min()), int(c.max()), int(r.max())),
            mean_prob=mean_prob,
        ))
    comps.sort(key=lambda comp: (comp.bbox[1], comp.bbox[0]))
    return comps


def components_to_detections(components: Sequence[Component], prob: Raster,
                             min_area: int = 1) -> list[Detection]:
    dets = []
    for comp in components:
        if comp.area < min_area:
            continue
        conf = float(np.clip(prob.pixels[comp.rows, comp.cols].mean(), 0.0, 1.0))
        x, y = prob.to_microns(comp.centroid[0], comp.centroid[1])
        dets.append(Detection(float(x), float(y), conf))
    return dets


def detect(prob: Raster, threshold: float, connectivity: int = 8,
           min_area: int = 1) -> list[Detection]:
    """Threshold a probability map and turn each blob into a detection."""
    if not 0.0 <= threshold <= 1.0:
        raise InvalidInputError(f"threshold must be in [0, 1], got {threshold}")
    fg = prob.with_pixels(prob.pixels >= threshold)
    return components_to_detections(connected_components(fg, connectivity), prob, min_area)


def _priority(dets: Sequence[Detection]) -> list[int]:
    return sorted(range(len(dets)), key=lambda i: (-dets[i].confidence, dets[i].y, dets[i].x))


def nms(detections: Sequence[Detection], radius: float) -> list[Detection]:
    """Greedy point suppression in confidence order.

    Ties in confidence are broken by (y, x).  The survivors come back in
    that same priority order.
    """
    if not radius > 0:
        raise InvalidInputError(f"NMS radius must be positive, got {radius}")
    if not detections:
        return []
    pts = np.array([(d.x, d.y) for d in detections], dtype=np.float64)
    tree = cKDTree(pts)
    suppressed = np.zeros(len(detections), dtype=bool)
    kept = []
    for i in _priority(detections):
        if suppressed[i]:
            continue
        kept.append(detections[i])
        for j in tree.query_ball_point(pts[i], radius):
            suppressed[j] = True
    return kept


def dilate_gt_points(points: Sequence[tuple[float, float]], radius: int,
                     shape: tuple[int, int],
                     resolution: Resolution | None = None) -> Raster:
    """Union of discrete disks around ground-truth pixel positions.

    ``shape`` is ``(width, height)``; points are ``(x, y)`` pixel indices.
    """
    w, h = shape
    if radius < 0:
        raise InvalidInputError(f"radius must be >= 0, got {radius}")
    out = np.zeros((h, w), dtype=bool)
    fp = disk(radius)
    for x, y in points:
        cx, cy = int(round(x)), int(round(y))
        if not (0 <= cx < w and 0 <= cy < h):
            raise InvalidInputError(f"point ({x}, {y}) outside {w}x{h} grid")
        x0, x1 = max(cx - radius, 0), min(cx + radius + 1, w)
        y0, y1 = max(cy - radius, 0), min(cy + radius + 1, h)
        out[y0:y1, x0:x1] |= fp[y0 - cy + radius:y1 - cy + radius, x0 - cx + radius:x1 - cx + radius]
    if resolution is None:
        return mask(out)
    return mask(out, resolution)
