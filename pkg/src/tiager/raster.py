"""Resolution-aware rasters and the binary morphology used across the pipeline.

A raster is a 2-D numpy grid plus placement metadata.  Masks are stored as
``bool`` arrays, probability maps as ``float64`` arrays in ``[0, 1]``.

Pixel ``(col, row)`` of a raster covers the physical square
``[(origin_x + col) * mpp, (origin_x + col + 1) * mpp)`` (and likewise for y),
so the origin is expressed in pixels of the raster's own resolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np
from scipy import ndimage as ndi

from .errors import InvalidInputError

MORPH_OPS = ("erode", "dilate", "open", "close")


@dataclass(frozen=True)
class Resolution:
    mpp: float

    def __post_init__(self):
        if not (self.mpp > 0 and math.isfinite(self.mpp)):
            raise InvalidInputError(f"mpp must be positive, got {self.mpp!r}")


SEG_LEVEL = Resolution(1.0)
DET_LEVEL = Resolution(SEG_LEVEL.mpp / 2)


@dataclass(frozen=True, eq=False)
class Raster:
    pixels: np.ndarray
    resolution: Resolution = DET_LEVEL
    origin: tuple[float, float] = field(default=(0.0, 0.0))

    def __post_init__(self):
        if self.pixels.ndim != 2:
            raise InvalidInputError(f"raster must be 2-D, got shape {self.pixels.shape}")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    @property
    def mpp(self) -> float:
        return self.resolution.mpp

    def is_binary(self) -> bool:
        if self.pixels.dtype == bool:
            return True
        return bool(np.isin(self.pixels, (0, 1)).all())

    def with_pixels(self, pixels: np.ndarray) -> "Raster":
        return replace(self, pixels=pixels)

    def to_microns(self, col, row):
        """Physical coordinates of pixel centres (accepts scalars or arrays)."""
        x = (np.asarray(col, dtype=float) + self.origin[0] + 0.5) * self.mpp
        y = (np.asarray(row, dtype=float) + self.origin[1] + 0.5) * self.mpp
        return x, y

    def pixel_index(self, x_um, y_um):
        """Integer (col, row) of the pixel containing each physical point."""
        col = np.floor(np.asarray(x_um, dtype=float) / self.mpp - self.origin[0]).astype(np.int64)
        row = np.floor(np.asarray(y_um, dtype=float) / self.mpp - self.origin[1]).astype(np.int64)
        return col, row

    def value_at(self, x_um: float, y_um: float):
        """Pixel value at a physical location, 0 outside the grid."""
        col, row = self.pixel_index(x_um, y_um)
        if 0 <= row < self.height and 0 <= col < self.width:
            return self.pixels[row, col]
        return self.pixels.dtype.type(0)


def read_window(arr: np.ndarray, x: int, y: int, w: int, h: int) -> np.ndarray:
    """Copy ``arr[y:y+h, x:x+w]`` with everything outside ``arr`` read as zero."""
    out = np.zeros((h, w), dtype=arr.dtype)
    x0, y0 = max(x, 0), max(y, 0)
    x1, y1 = min(x + w, arr.shape[1]), min(y + h, arr.shape[0])
    if x1 > x0 and y1 > y0:
        out[y0 - y:y1 - y, x0 - x:x1 - x] = arr[y0:y1, x0:x1]
    return out


class ArraySource:
    """In-memory raster exposed through the windowed-read interface.

    Anything with ``width``, ``height``, ``resolution`` and
    ``read(x, y, w, h) -> Raster`` can feed the inference pipeline; slide
    readers implement the same surface.
    """

    def __init__(self, raster: Raster):
        self.raster = raster

    @property
    def width(self) -> int:
        return self.raster.width

    @property
    def height(self) -> int:
        return self.raster.height

    @property
    def resolution(self) -> Resolution:
        return self.raster.resolution

    @property
    def origin(self) -> tuple[float, float]:
        return self.raster.origin

    def read(self, x: int, y: int, w: int, h: int) -> Raster:
        ox, oy = self.raster.origin
        return Raster(read_window(self.raster.pixels, x, y, w, h), self.resolution, (ox + x, oy + y))


def mask(pixels, resolution: Resolution = DET_LEVEL, origin=(0.0, 0.0)) -> Raster:
    """Build a boolean mask raster, rejecting non-binary input."""
    arr = np.asarray(pixels)
    if arr.dtype != bool:
        if not np.isin(arr, (0, 1)).all():
            raise InvalidInputError("mask values must be 0 or 1")
        arr = arr.astype(bool)
    return Raster(arr, resolution, tuple(float(v) for v in origin))


def probability_map(pixels, resolution: Resolution = DET_LEVEL, origin=(0.0, 0.0)) -> Raster:
    arr = np.asarray(pixels, dtype=np.float64)
    if arr.size and (np.nanmin(arr) < 0 or np.nanmax(arr) > 1 or np.isnan(arr).any()):
        raise InvalidInputError("probability values must lie in [0, 1]")
    return Raster(arr, resolution, tuple(float(v) for v in origin))


def disk(radius: int) -> np.ndarray:
    """Discrete disk ``{(dx, dy): dx^2 + dy^2 <= r^2}`` as a boolean footprint."""
    if radius < 0:
        raise InvalidInputError(f"radius must be >= 0, got {radius}")
    y, x = np.ogrid[-radius:radius + 1, -radius:radius + 1]
    return x * x + y * y <= radius * radius


def _as_bool(raster: Raster) -> np.ndarray:
    if not raster.is_binary():
        raise InvalidInputError("morphology requires a binary mask")
    return raster.pixels.astype(bool, copy=False)


def morph(raster: Raster, op: str, radius: int) -> Raster:
    """Binary morphology with a disk structuring element.

    The grid is treated as a window onto an infinite plane whose exterior is
    background, so closing can bridge structures through the border margin
    and opening/closing keep their idempotence.
    """
    if op not in MORPH_OPS:
        raise InvalidInputError(f"unknown morphology op {op!r}")
    if radius < 0 or int(radius) != radius:
        raise InvalidInputError(f"radius must be a non-negative integer, got {radius!r}")
    arr = _as_bool(raster)
    radius = int(radius)
    if radius == 0 or arr.size == 0:
        return raster.with_pixels(arr.copy())

    fp = disk(radius)
    if op == "erode":
        out = ndi.binary_erosion(arr, structure=fp, border_value=0)
    elif op == "dilate":
        out = ndi.binary_dilation(arr, structure=fp, border_value=0)
    elif op == "open":
        out = ndi.binary_erosion(arr, structure=fp, border_value=0)
        out = ndi.binary_dilation(out, structure=fp, border_value=0)
    else:
        padded = np.pad(arr, radius)
        padded = ndi.binary_dilation(padded, structure=fp, border_value=0)
        padded = ndi.binary_erosion(padded, structure=fp, border_value=0)
        out = padded[radius:-radius, radius:-radius]
    return raster.with_pixels(out)


def central_crop(raster: Raster, out_w: int, out_h: int) -> Raster:
    if out_w > raster.width or out_h > raster.height or out_w < 0 or out_h < 0:
        raise InvalidInputError(
            f"cannot crop {raster.width}x{raster.height} to {out_w}x{out_h}")
    left = (raster.width - out_w) // 2
    top = (raster.height - out_h) // 2
    pixels = raster.pixels[top:top + out_h, left:left + out_w]
    ox, oy = raster.origin
    return Raster(pixels, raster.resolution, (ox + left, oy + top))


def scale_factor(source: Resolution, target: Resolution, max_denominator: int = 64) -> Fraction:
    """Rational ``target.mpp / source.mpp``; >1 means downscaling."""
    ratio = target.mpp / source.mpp
    frac = Fraction(ratio).limit_denominator(max_denominator)
    if abs(float(frac) - ratio) > 1e-9 * ratio:
        raise InvalidInputError(
            f"resolutions {source.mpp} and {target.mpp} are not rationally related")
    return frac


def _box_downscale(arr: np.ndarray, k: int) -> np.ndarray:
    h, w = arr.shape
    oh, ow = -(-h // k), -(-w // k)
    padded = np.zeros((oh * k, ow * k), dtype=np.float64)
    counts = np.zeros_like(padded)
    padded[:h, :w] = arr
    counts[:h, :w] = 1.0
    sums = padded.reshape(oh, k, ow, k).sum(axis=(1, 3))
    n = counts.reshape(oh, k, ow, k).sum(axis=(1, 3))
    return sums / n


def resample(raster: Raster, target: Resolution) -> Raster:
    """Change resolution: nearest-neighbour up, box-average down.

    Masks stay masks (a downscaled pixel is set when at least half of its
    footprint was set).  Partial edge blocks average only the pixels that
    exist, so the physical extent is kept to within one target pixel.
    """
    if not isinstance(target, Resolution):
        target = Resolution(float(target))
    factor = scale_factor(raster.resolution, target)
    if factor == 1:
        return Raster(raster.pixels.copy(), target, raster.origin)

    is_mask = raster.pixels.dtype == bool
    arr = raster.pixels.astype(np.float64)
    up, down = factor.denominator, factor.numerator
    if up > 1:
        arr = np.repeat(np.repeat(arr, up, axis=0), up, axis=1)
    if down > 1:
        arr = _box_downscale(arr, down)
    if is_mask:
        arr = arr >= 0.5

    ox, oy = raster.origin
    origin = (ox / float(factor), oy / float(factor))
    return Raster(arr, target, origin)
