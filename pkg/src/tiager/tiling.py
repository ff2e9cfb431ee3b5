"""Tile planning over a zero-padded canvas, patch extraction and stitching."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import CoverageError, InvalidInputError
from .raster import Raster, read_window

STITCH_MODES = ("average", "max")


@dataclass(frozen=True, order=True)
class TileCoord:
    # field order gives the row-major (y, x) sort
    y: int
    x: int
    w: int
    h: int

    def as_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "w": self.w, "h": self.h}


@dataclass(frozen=True)
class TilePlan:
    canvas_w: int
    canvas_h: int
    patch: int
    stride: int
    pad: int
    coords: tuple[TileCoord, ...]

    @property
    def width(self) -> int:
        return self.canvas_w - 2 * self.pad

    @property
    def height(self) -> int:
        return self.canvas_h - 2 * self.pad

    def __len__(self):
        return len(self.coords)

    def __iter__(self):
        return iter(self.coords)

    def as_dict(self) -> dict:
        return {
            "canvas_w": self.canvas_w,
            "canvas_h": self.canvas_h,
            "patch": self.patch,
            "stride": self.stride,
            "pad": self.pad,
            "coords": [c.as_dict() for c in self.coords],
        }


def axis_positions(length: int, patch: int, stride: int) -> list[int]:
    """Tile start positions along one axis, the last one clamped to the edge."""
    if patch >= length:
        return [0]
    positions = []
    pos = 0
    while True:
        clamped = min(pos, length - patch)
        if not positions or positions[-1] != clamped:
            positions.append(clamped)
        if clamped + patch >= length:
            return positions
        pos += stride


def plan_tiles(width: int, height: int, patch: int, stride: int, pad: int = 0) -> TilePlan:
    if patch <= 0:
        raise InvalidInputError(f"patch must be positive, got {patch}")
    if stride <= 0:
        raise InvalidInputError(f"stride must be positive, got {stride}")
    if stride > patch:
        raise CoverageError(f"stride {stride} > patch {patch} would leave gaps")
    if pad < 0 or width < 0 or height < 0:
        raise InvalidInputError("width, height and pad must be non-negative")

    canvas_w = width + 2 * pad
    canvas_h = height + 2 * pad
    xs = axis_positions(canvas_w, patch, stride)
    ys = axis_positions(canvas_h, patch, stride)
    coords = tuple(TileCoord(y=y, x=x, w=patch, h=patch) for y in ys for x in xs)
    return TilePlan(canvas_w, canvas_h, patch, stride, pad, coords)


def extract_patch(raster: Raster, coord: TileCoord, pad: int) -> Raster:
    x, y = coord.x - pad, coord.y - pad
    pixels = read_window(raster.pixels, x, y, coord.w, coord.h)
    ox, oy = raster.origin
    return Raster(pixels, raster.resolution, (ox + x, oy + y))


def _placement(patch: Raster, origin, pad: int) -> tuple[int, int]:
    dx = patch.origin[0] - origin[0] + pad
    dy = patch.origin[1] - origin[1] + pad
    ix, iy = int(round(dx)), int(round(dy))
    if abs(ix - dx) > 1e-6 or abs(iy - dy) > 1e-6:
        raise InvalidInputError(f"patch origin {patch.origin} is not on the pixel grid")
    return ix, iy


def stitch(
    patches: Iterable[tuple[TileCoord, Raster]],
    plan: TilePlan,
    mode: str = "average",
    origin: Sequence[float] = (0.0, 0.0),
) -> Raster:
    """Merge per-tile rasters back into one raster of the unpadded size.

    Each patch is placed by its own origin (relative to ``origin``, the
    origin of the raster the plan was built for), so centrally cropped
    outputs land where they belong.  Contributions are folded in plan order
    whatever order they arrive in, which keeps the result bit-identical
    across thread schedules.
    """
    if mode not in STITCH_MODES:
        raise InvalidInputError(f"unknown stitch mode {mode!r}")
    by_coord: dict[TileCoord, Raster] = {}
    for coord, patch in patches:
        if coord in by_coord:
            raise InvalidInputError(f"duplicate patch for tile {coord}")
        by_coord[coord] = patch
    missing = [c for c in plan.coords if c not in by_coord]
    if missing:
        raise CoverageError(f"{len(missing)} planned tile(s) missing, first {missing[0]}")
    extra = set(by_coord) - set(plan.coords)
    if extra:
        raise InvalidInputError(f"patch for unplanned tile {min(extra)}")

    resolution = by_coord[plan.coords[0]].resolution if plan.coords else None
    acc = np.zeros((plan.canvas_h, plan.canvas_w), dtype=np.float64)
    count = np.zeros((plan.canvas_h, plan.canvas_w), dtype=np.int64)
    for coord in plan.coords:
        patch = by_coord[coord]
        px, py = _placement(patch, origin, plan.pad)
        # clip to canvas
        x0, y0 = max(px, 0), max(py, 0)
        x1 = min(px + patch.width, plan.canvas_w)
        y1 = min(py + patch.height, plan.canvas_h)
        if x1 <= x0 or y1 <= y0:
            continue
        vals = patch.pixels[y0 - py:y1 - py, x0 - px:x1 - px].astype(np.float64)
        region = (slice(y0, y1), slice(x0, x1))
        if mode == "max":
            acc[region] = np.where(count[region] > 0, np.maximum(acc[region], vals), vals)
            count[region] += 1
        else:
            # running mean: exact when every contribution is equal
            count[region] += 1
            acc[region] += (vals - acc[region]) / count[region]

    p = plan.pad
    out = acc[p:p + plan.height, p:p + plan.width]
    return Raster(out.copy(), resolution, (float(origin[0]), float(origin[1])))
