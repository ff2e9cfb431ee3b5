"""Tumour bulk, tumour-associated stroma (TAS) and the TILs score.

The score is ``T = N * A_TIL / A_TAS * 100`` rounded to an integer in
``[0, 100]``, where ``N`` counts TILs inside the TAS, ``A_TIL`` is the area of
one TIL and ``A_TAS`` the TAS area.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Real
from typing import Sequence

import numpy as np
from scipy import ndimage as ndi
from scipy.spatial import Delaunay, QhullError
from skimage.measure import find_contours

from .errors import DegenerateInputError, InvalidInputError, StageError, TiagerError
from .raster import Raster, morph, read_window, resample

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BulkParams:
    """Tumour-bulk knobs; pixel quantities refer to the tumour mask grid."""

    pre_close_radius: int = 10
    min_component_area: int = 500
    boundary_sample_step: int = 8
    max_edge_um: float = 250.0
    post_fill: bool = True

    def __post_init__(self):
        for name in ("pre_close_radius", "min_component_area", "boundary_sample_step"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value <= 0:
                raise InvalidInputError(f"bulk.{name} must be a positive integer, got {value!r}")
        if not self.max_edge_um > 0:
            raise InvalidInputError(f"bulk.max_edge_um must be positive, got {self.max_edge_um!r}")


@dataclass(frozen=True)
class TilsResult:
    n_tils: int
    a_tas_um2: float
    a_til_um2: float
    tils_score: int

    def to_dict(self) -> dict:
        return {
            "n_tils": self.n_tils,
            "a_tas_um2": self.a_tas_um2,
            "a_til_um2": self.a_til_um2,
            "tils_score": self.tils_score,
        }


def remove_small_components(m: Raster, min_area: int) -> Raster:
    labels, n = ndi.label(m.pixels, structure=np.ones((3, 3), dtype=bool))
    if n == 0:
        return m.with_pixels(np.zeros(m.shape, dtype=bool))
    areas = np.bincount(labels.ravel())
    keep = areas >= min_area
    keep[0] = False
    return m.with_pixels(keep[labels])


def sample_boundary(m: np.ndarray, step: float) -> np.ndarray:
    """Points every ``step`` pixels of arc length along all mask contours.

    Returned as ``(x, y)`` rows in pixel-index coordinates (pixel centres at
    integers).  Contours run half-way between inside and outside pixels.
    """
    padded = np.pad(m.astype(np.float64), 1)
    samples = []
    for contour in find_contours(padded, 0.5):
        pts = contour[:, ::-1] - 1.0  # (row, col) -> (x, y), undo padding
        seg = np.hypot(*np.diff(pts, axis=0).T)
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        total = cum[-1]
        if total == 0:
            samples.append(pts[:1])
            continue
        at = np.arange(0.0, total, step)
        x = np.interp(at, cum, pts[:, 0])
        y = np.interp(at, cum, pts[:, 1])
        samples.append(np.column_stack([x, y]))
    if not samples:
        return np.zeros((0, 2))
    return np.unique(np.concatenate(samples), axis=0)


def rasterize_triangles(triangles: np.ndarray, width: int, height: int) -> np.ndarray:
    """Pixels whose centre lies in (or on the edge of) any triangle.

    ``triangles`` has shape ``(n, 3, 2)`` holding ``(x, y)`` vertices.
    """
    out = np.zeros((height, width), dtype=bool)
    eps = 1e-9
    for tri in triangles:
        (ax, ay), (bx, by), (cx, cy) = tri
        area2 = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if area2 == 0:
            continue
        if area2 < 0:
            bx, by, cx, cy = cx, cy, bx, by
            area2 = -area2
        x0 = max(int(np.ceil(min(ax, bx, cx) - eps)), 0)
        x1 = min(int(np.floor(max(ax, bx, cx) + eps)), width - 1)
        y0 = max(int(np.ceil(min(ay, by, cy) - eps)), 0)
        y1 = min(int(np.floor(max(ay, by, cy) + eps)), height - 1)
        if x1 < x0 or y1 < y0:
            continue
        px, py = np.meshgrid(np.arange(x0, x1 + 1, dtype=np.float64),
                             np.arange(y0, y1 + 1, dtype=np.float64))
        tol = eps * area2
        e0 = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
        e1 = (cx - bx) * (py - by) - (cy - by) * (px - bx)
        e2 = (ax - cx) * (py - cy) - (ay - cy) * (px - cx)
        inside = (e0 >= -tol) & (e1 >= -tol) & (e2 >= -tol)
        out[y0:y1 + 1, x0:x1 + 1] |= inside
    return out


def clean_tumour(tumour_mask: Raster, params: BulkParams) -> Raster:
    """Closing followed by removal of small components."""
    closed = morph(tumour_mask, "close", params.pre_close_radius)
    return remove_small_components(closed, params.min_component_area)


def tumour_bulk(tumour_mask: Raster, params: BulkParams = BulkParams()) -> Raster:
    """Concave envelope of the invasive tumour.

    Boundary samples of the cleaned tumour are Delaunay-triangulated, and
    triangles whose longest edge exceeds ``max_edge_um`` are dropped before
    the rest are rasterised and merged with the cleaned mask.
    """
    if not tumour_mask.is_binary():
        raise InvalidInputError("tumour_bulk needs a binary tumour mask")
    cleaned = clean_tumour(tumour_mask, params)
    bulk = cleaned.pixels.copy()
    pts = sample_boundary(cleaned.pixels, params.boundary_sample_step)
    if len(pts) >= 3:
        try:
            simplices = Delaunay(pts).simplices
        except QhullError:
            log.debug("degenerate boundary samples, skipping triangulation")
            simplices = np.zeros((0, 3), dtype=int)
        tris = pts[simplices]
        edges = np.stack([
            np.hypot(*(tris[:, 1] - tris[:, 0]).T),
            np.hypot(*(tris[:, 2] - tris[:, 1]).T),
            np.hypot(*(tris[:, 0] - tris[:, 2]).T),
        ], axis=1)
        keep = edges.max(axis=1) * tumour_mask.mpp <= params.max_edge_um
        bulk |= rasterize_triangles(tris[keep], tumour_mask.width, tumour_mask.height)
    if params.post_fill:
        bulk = ndi.binary_fill_holes(bulk)
    return tumour_mask.with_pixels(bulk)


def tumour_associated_stroma(bulk: Raster, stroma_mask: Raster) -> Raster:
    if bulk.shape != stroma_mask.shape:
        raise InvalidInputError(f"shape mismatch: bulk {bulk.shape} vs stroma {stroma_mask.shape}")
    if bulk.mpp != stroma_mask.mpp:
        raise InvalidInputError("bulk and stroma masks are at different resolutions")
    if not (bulk.is_binary() and stroma_mask.is_binary()):
        raise InvalidInputError("TAS needs binary masks")
    return bulk.with_pixels(bulk.pixels.astype(bool) & stroma_mask.pixels.astype(bool))


def count_tils_in_mask(detections: Sequence, m: Raster) -> int:
    if not detections:
        return 0
    xs = np.array([d.x for d in detections], dtype=np.float64)
    ys = np.array([d.y for d in detections], dtype=np.float64)
    col, row = m.pixel_index(xs, ys)
    inside = (col >= 0) & (col < m.width) & (row >= 0) & (row < m.height)
    hits = np.zeros(len(detections), dtype=bool)
    hits[inside] = m.pixels[row[inside], col[inside]].astype(bool)
    return int(hits.sum())


def tils_score(n: int, a_tas: Real, a_til: Real) -> int:
    """Integer TILs score, rounded half away from zero and clamped to [0, 100].

    Computed in exact rational arithmetic so ties round the same way every
    time.  An empty TAS scores 0 when no TILs were found.
    """
    if isinstance(n, bool) or int(n) != n:
        raise InvalidInputError(f"N must be an integer, got {n!r}")
    n = int(n)
    if n < 0 or a_tas < 0:
        raise InvalidInputError(f"N and A_TAS must be non-negative, got N={n}, A_TAS={a_tas}")
    if not a_til > 0:
        raise InvalidInputError(f"A_TIL must be positive, got {a_til}")
    if a_tas == 0:
        if n == 0:
            return 0
        raise DegenerateInputError(f"{n} TILs counted in an empty tumour-associated stroma")
    raw = Fraction(n) * Fraction(a_til) * 100 / Fraction(a_tas)
    rounded = (raw + Fraction(1, 2)).__floor__()
    return max(0, min(100, rounded))


@dataclass
class PipelineResult:
    tumour: Raster
    stroma: Raster
    bulk: Raster
    tas: Raster
    til_prob: Raster | None
    candidates: list = field(default_factory=list)
    detections: list = field(default_factory=list)
    result: TilsResult | None = None


def fit_to(raster: Raster, width: int, height: int) -> Raster:
    """Crop or zero-extend to ``width x height`` keeping the origin."""
    if raster.shape == (height, width):
        return raster
    return raster.with_pixels(read_window(raster.pixels, 0, 0, width, height))


class _stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        log.info("stage %s", self.name)

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and isinstance(exc, TiagerError) and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


def run_pipeline(wsi, seg_ensemble, det_ensemble, cfg, tissue: Raster | None = None) -> PipelineResult:
    """Segmentation -> bulk -> TAS -> detection -> NMS -> score.

    ``wsi`` must provide ``source_at(resolution)`` returning a windowed
    reader at that resolution (see :mod:`tiager.slide`).
    """
    from .detection import detect, nms
    from .inference.pipeline import run_detection, run_segmentation

    seg_source = wsi.source_at(seg_ensemble.resolution)
    det_source = wsi.source_at(det_ensemble.resolution)

    with _stage("segment"):
        roi = None if tissue is None else fit_to(resample(tissue, seg_source.resolution),
                                                 seg_source.width, seg_source.height)
        tumour, stroma = run_segmentation(seg_source, seg_ensemble, cfg, roi=roi)
    with _stage("bulk"):
        bulk = tumour_bulk(tumour, cfg.bulk)
        tas = tumour_associated_stroma(bulk, stroma)
    with _stage("detect"):
        tas_det = fit_to(resample(tas, det_source.resolution), det_source.width, det_source.height)
        prob = run_detection(det_source, det_ensemble, cfg, roi=tas_det)
        candidates = detect(prob, cfg.det.threshold, cfg.det.connectivity, cfg.det.min_area_px)
        kept = nms(candidates, cfg.det.nms_radius_um)
    with _stage("score"):
        n = count_tils_in_mask(kept, tas)
        a_tas = float(np.count_nonzero(tas.pixels)) * tas.mpp ** 2
        a_til = cfg.score.a_til_um2
        result = TilsResult(n, a_tas, a_til, tils_score(n, a_tas, a_til))
    log.info("N=%d A_TAS=%.1f um2 T=%d", n, a_tas, result.tils_score)
    return PipelineResult(tumour, stroma, bulk, tas, prob, candidates, kept, result)


def score_wsi(wsi, seg_ensemble, det_ensemble, cfg) -> TilsResult:
    return run_pipeline(wsi, seg_ensemble, det_ensemble, cfg).result
