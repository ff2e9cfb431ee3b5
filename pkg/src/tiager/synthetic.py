"""Synthetic slides with known geometry, for tests and demos.

The scoring slide has a square of stroma (``stroma_um`` on a side) enclosed
by a tumour frame of about the same area, and TILs planted on a grid inside
the stroma.  With passthrough backends every quantity of the score is known
in closed form: ``A_TAS = stroma_um**2`` and ``N = n_tils``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .detection import Detection
from .io import save_detections, save_mask
from .raster import DET_LEVEL, SEG_LEVEL, Raster, _box_downscale
from .slide import write_slide

BACKGROUND, STROMA_GREY, TUMOUR_GREY, TIL_GREY = 230, 180, 70, 20


@dataclass(frozen=True)
class SyntheticSlide:
    manifest: Path
    tumour: Raster
    stroma: Raster
    tils: list[Detection]


def til_grid(x0_um: float, y0_um: float, side_um: float, n: int, spacing_um: float) -> list[Detection]:
    """``n`` points on a square grid inside ``[x0, x0+side)``, snapped to DET pixel centres."""
    per_row = int((side_um - spacing_um / 2) // spacing_um) + 1
    if per_row * per_row < n:
        raise ValueError(f"{n} TILs do not fit at {spacing_um} um spacing")
    mpp = DET_LEVEL.mpp
    pts = []
    for k in range(n):
        i, j = divmod(k, per_row)
        x = x0_um + spacing_um / 2 + j * spacing_um
        y = y0_um + spacing_um / 2 + i * spacing_um
        pts.append(Detection((math.floor(x / mpp) + 0.5) * mpp, (math.floor(y / mpp) + 0.5) * mpp, 1.0))
    return pts


def make_scoring_slide(out_dir, n_tils: int = 995, stroma_um: int = 1000, frame_um: int = 207,
                       margin_um: int = 93, spacing_um: float = 31.0, with_tumour: bool = True,
                       stroma_inside: bool = True, slide_id: str = "synthetic") -> SyntheticSlide:
    """Write the scoring fixture and return its ground truth.

    ``with_tumour=False`` gives an all-background slide (no tumour, stroma or
    TILs).  ``stroma_inside=False`` moves the stroma square outside the tumour
    frame so none of it belongs to the bulk.
    """
    out = Path(out_dir)
    seg_mpp = SEG_LEVEL.mpp
    inner0 = margin_um + frame_um
    outer = stroma_um + 2 * frame_um
    side = margin_um * 2 + outer
    if not stroma_inside:
        side += stroma_um + margin_um
    n = int(round(side / seg_mpp))

    tumour = np.zeros((n, n), dtype=bool)
    stroma = np.zeros((n, n), dtype=bool)
    tils: list[Detection] = []
    if with_tumour:
        a, b = margin_um, margin_um + outer
        tumour[a:b, a:b] = True
        tumour[inner0:inner0 + stroma_um, inner0:inner0 + stroma_um] = False
        if stroma_inside:
            sx = sy = inner0
        else:
            sx, sy = margin_um + outer + margin_um, margin_um
            tumour[inner0:inner0 + stroma_um, inner0:inner0 + stroma_um] = True
        stroma[sy:sy + stroma_um, sx:sx + stroma_um] = True
        tils = til_grid(sx * seg_mpp, sy * seg_mpp, stroma_um * seg_mpp, n_tils, spacing_um)

    k = int(round(seg_mpp / DET_LEVEL.mpp))
    base = np.full((n * k, n * k), BACKGROUND, dtype=np.uint8)
    base[np.repeat(np.repeat(stroma, k, 0), k, 1)] = STROMA_GREY
    base[np.repeat(np.repeat(tumour, k, 0), k, 1)] = TUMOUR_GREY
    for d in tils:
        c, r = int(d.x / DET_LEVEL.mpp), int(d.y / DET_LEVEL.mpp)
        base[r - 2:r + 3, c - 2:c + 3] = TIL_GREY
    level1 = np.round(_box_downscale(base.astype(np.float64), k)).astype(np.uint8)

    tumour_r = Raster(tumour, SEG_LEVEL)
    stroma_r = Raster(stroma, SEG_LEVEL)
    save_mask(tumour_r, out / "tumour.png")
    save_mask(stroma_r, out / "stroma.png")
    save_detections(tils, out / "gt_detections.json")
    manifest = write_slide(
        out, slide_id, {0: (base, DET_LEVEL.mpp), 1: (level1, SEG_LEVEL.mpp)}, tile_size=512,
        masks={"tumour": out / "tumour.png", "stroma": out / "stroma.png"},
        gt_detections=out / "gt_detections.json")
    return SyntheticSlide(manifest, tumour_r, stroma_r, tils)
