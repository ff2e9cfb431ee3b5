"""WSI-level segmentation and detection passes over a tiled source."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

import numpy as np

from ..errors import BackendError, InvalidInputError
from ..raster import Raster, central_crop, morph
from ..tiling import TileCoord, plan_tiles, stitch
from .backends import DETECTION, SEGMENTATION, SegClass
from .ensemble import threshold

log = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def parallel_map(fn: Callable[[T], R], items: Iterable[T], workers: int) -> list[R]:
    """Ordered map over a bounded thread pool (serial when ``workers == 1``)."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def source_origin(source) -> tuple[float, float]:
    return tuple(getattr(source, "origin", (0.0, 0.0)))


def _check_inputs(source, ensemble, flavor: str, patch: int, roi: Raster | None):
    if ensemble.flavor != flavor:
        raise InvalidInputError(f"expected a {flavor} ensemble, got {ensemble.flavor}")
    if ensemble.patch_size != patch:
        raise InvalidInputError(
            f"ensemble expects {ensemble.patch_size}px patches, config says {patch}px")
    if ensemble.resolution != source.resolution:
        raise InvalidInputError(
            f"source is at {source.resolution.mpp} mpp, ensemble expects {ensemble.resolution.mpp} mpp")
    if roi is not None and (roi.width, roi.height) != (source.width, source.height):
        raise InvalidInputError("ROI mask does not match the source dimensions")


def _roi_hit(roi: Raster | None, x: int, y: int, w: int, h: int) -> bool:
    if roi is None:
        return True
    x0, y0 = max(x, 0), max(y, 0)
    return bool(roi.pixels[y0:max(y + h, 0), x0:max(x + w, 0)].any())


def _predict(ensemble, patch: Raster, where: str):
    try:
        return ensemble.predict(patch)
    except BackendError as exc:
        raise BackendError(f"backend failed on {where}: {exc}") from exc
    except InvalidInputError:
        raise
    except Exception as exc:
        raise BackendError(f"backend failed on {where}: {exc!r}") from exc


def run_segmentation(source, ensemble, cfg, roi: Raster | None = None) -> tuple[Raster, Raster]:
    """Tumour and stroma masks for a whole slide level.

    Per patch: ensemble average, per-class threshold, opening of the tumour
    class, central crop.  The crops are then stitched back together.
    ``roi`` (same grid as ``source``) skips patches with no tissue.
    """
    seg = cfg.seg
    _check_inputs(source, ensemble, SEGMENTATION, seg.patch, roi)
    plan = plan_tiles(source.width, source.height, seg.patch, seg.stride, seg.pad)
    log.info("segmentation: %d patches of %dpx", len(plan), seg.patch)

    def work(coord: TileCoord):
        x, y = coord.x - plan.pad, coord.y - plan.pad
        patch = source.read(x, y, coord.w, coord.h)
        if not _roi_hit(roi, x, y, coord.w, coord.h):
            empty = patch.with_pixels(np.zeros(patch.shape, dtype=bool))
            tumour = stroma = empty
        else:
            probs = _predict(ensemble, patch, f"segmentation tile x={coord.x} y={coord.y}")
            tumour = threshold(probs[SegClass.TUMOUR], seg.threshold.tumour)
            stroma = threshold(probs[SegClass.STROMA], seg.threshold.stroma)
            tumour = morph(tumour, "open", seg.open_radius_px)
        return (coord,
                central_crop(tumour, seg.crop, seg.crop),
                central_crop(stroma, seg.crop, seg.crop))

    results = parallel_map(work, plan.coords, cfg.worker_count)
    origin = source_origin(source)
    tumour = stitch(((c, t) for c, t, _ in results), plan, "average", origin)
    stroma = stitch(((c, s) for c, _, s in results), plan, "average", origin)
    tumour = tumour.with_pixels(tumour.pixels >= 0.5)
    # tumour wins where both classes fire
    stroma = stroma.with_pixels((stroma.pixels >= 0.5) & ~tumour.pixels)
    return tumour, stroma


def run_detection(source, ensemble, cfg, roi: Raster | None = None) -> Raster:
    """TIL probability map for a whole slide level.

    Non-overlapping outer tiles are split into overlapping inner patches;
    inner outputs are stitched per tile, then tiles are stitched into the
    slide map.  With ``roi``, tiles and patches that miss it are never sent
    to the backend and read as zero.
    """
    det = cfg.det
    _check_inputs(source, ensemble, DETECTION, det.patch, roi)
    origin = source_origin(source)
    outer = plan_tiles(source.width, source.height, det.tile, det.tile, 0)

    jobs = []
    tiles = []
    for tc in outer.coords:
        tw = min(tc.w, source.width - tc.x)
        th = min(tc.h, source.height - tc.y)
        inner = plan_tiles(tw, th, det.patch, det.stride, 0)
        active = _roi_hit(roi, tc.x, tc.y, tw, th)
        tiles.append((tc, inner, tw, th))
        for ic in inner.coords:
            jobs.append((tc, ic, active and _roi_hit(roi, tc.x + ic.x, tc.y + ic.y, ic.w, ic.h)))
    n_active = sum(1 for *_, a in jobs if a)
    log.info("detection: %d tiles, %d/%d patches inside ROI", len(tiles), n_active, len(jobs))

    def work(job):
        tc, ic, active = job
        x, y = tc.x + ic.x, tc.y + ic.y
        patch = source.read(x, y, ic.w, ic.h)
        if not active:
            return patch.with_pixels(np.zeros(patch.shape, dtype=np.float64))
        return _predict(ensemble, patch, f"detection patch x={x} y={y}")

    outputs = parallel_map(work, jobs, cfg.worker_count)
    by_tile: dict[TileCoord, list] = {}
    for (tc, ic, _), out in zip(jobs, outputs):
        by_tile.setdefault(tc, []).append((ic, out))

    tile_maps = []
    for tc, inner, tw, th in tiles:
        tile_origin = (origin[0] + tc.x, origin[1] + tc.y)
        tile_maps.append((tc, stitch(by_tile[tc], inner, det.stitch_mode, tile_origin)))
    return stitch(tile_maps, outer, det.stitch_mode, origin)
