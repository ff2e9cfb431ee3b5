"""Patch-level segmentation backends.

A backend maps one input patch to class probabilities.  Two flavours exist:

* ``segmentation``: returns ``{SegClass: Raster}`` (tumour, stroma, other)
* ``detection``: returns a single TIL probability ``Raster``

Every backend declares how it may be shared between worker threads through
``thread_safe``.  Backends that are not thread safe must provide ``clone()``
and the pipeline gives each worker its own copy.
"""

from __future__ import annotations

import enum
from typing import Mapping, Protocol, Sequence, Union, runtime_checkable

import numpy as np
from scipy import ndimage as ndi

from ..errors import InvalidInputError
from ..raster import DET_LEVEL, SEG_LEVEL, Raster, Resolution, disk

SEGMENTATION = "segmentation"
DETECTION = "detection"
FLAVORS = (SEGMENTATION, DETECTION)


class SegClass(enum.Enum):
    TUMOUR = "tumour"
    STROMA = "stroma"
    OTHER = "other"


SEG_CLASSES = (SegClass.TUMOUR, SegClass.STROMA, SegClass.OTHER)

BackendOutput = Union[Mapping[SegClass, Raster], Raster]


@runtime_checkable
class SegmentationBackend(Protocol):
    flavor: str
    patch_size: int
    resolution: Resolution
    thread_safe: bool

    def predict(self, patch: Raster) -> BackendOutput:
        ...


def _check_patch(backend, patch: Raster):
    if patch.width != backend.patch_size or patch.height != backend.patch_size:
        raise InvalidInputError(
            f"{type(backend).__name__} expects {backend.patch_size}x{backend.patch_size} patches, "
            f"got {patch.width}x{patch.height}")


def _window_at(source, patch: Raster) -> np.ndarray:
    x, y = patch.origin
    return source.read(int(round(x)), int(round(y)), patch.width, patch.height).pixels


class PassthroughSegmentation:
    """Emits co-registered ground-truth masks as class probabilities.

    ``sources`` maps tumour and stroma to raster sources (anything with
    ``read(x, y, w, h)``) at the backend resolution.  The input patch pixels
    are ignored; only its placement is used.
    """

    flavor = SEGMENTATION
    thread_safe = True

    def __init__(self, sources: Mapping[SegClass, object], patch_size: int = 512,
                 resolution: Resolution = SEG_LEVEL):
        missing = {SegClass.TUMOUR, SegClass.STROMA} - set(sources)
        if missing:
            raise InvalidInputError(f"passthrough backend needs masks for {sorted(c.value for c in missing)}")
        self.sources = dict(sources)
        self.patch_size = patch_size
        self.resolution = resolution

    def predict(self, patch: Raster) -> dict[SegClass, Raster]:
        _check_patch(self, patch)
        tumour = _window_at(self.sources[SegClass.TUMOUR], patch).astype(np.float64)
        stroma = _window_at(self.sources[SegClass.STROMA], patch).astype(np.float64)
        stroma = np.minimum(stroma, 1.0 - tumour)
        other = 1.0 - tumour - stroma
        return {
            SegClass.TUMOUR: patch.with_pixels(tumour),
            SegClass.STROMA: patch.with_pixels(stroma),
            SegClass.OTHER: patch.with_pixels(other),
        }


class PassthroughDetection:
    """Renders ground-truth TIL points as dilated disks (probability 1).

    Points are physical coordinates in microns; the disk radius mirrors
    the dilation used to build detection training targets.
    """

    flavor = DETECTION
    thread_safe = True

    def __init__(self, points_um: Sequence[tuple[float, float]], patch_size: int = 128,
                 resolution: Resolution = DET_LEVEL, radius_px: int = 3):
        pts = np.asarray(points_um, dtype=np.float64).reshape(-1, 2)
        self.cols = np.floor(pts[:, 0] / resolution.mpp).astype(np.int64)
        self.rows = np.floor(pts[:, 1] / resolution.mpp).astype(np.int64)
        self.patch_size = patch_size
        self.resolution = resolution
        self.radius_px = radius_px
        dy, dx = np.nonzero(disk(radius_px))
        self._offsets = (dy - radius_px, dx - radius_px)

    def predict(self, patch: Raster) -> Raster:
        _check_patch(self, patch)
        x0, y0 = int(round(patch.origin[0])), int(round(patch.origin[1]))
        r = self.radius_px
        out = np.zeros(patch.shape, dtype=np.float64)
        sel = ((self.cols >= x0 - r) & (self.cols < x0 + patch.width + r)
               & (self.rows >= y0 - r) & (self.rows < y0 + patch.height + r))
        for c, rr in zip(self.cols[sel] - x0, self.rows[sel] - y0):
            ys = self._offsets[0] + rr
            xs = self._offsets[1] + c
            ok = (ys >= 0) & (ys < patch.height) & (xs >= 0) & (xs < patch.width)
            out[ys[ok], xs[ok]] = 1.0
        return patch.with_pixels(out)


def _ramp(x, centre, width):
    return np.clip((x - centre) / width + 0.5, 0.0, 1.0)


class LuminanceBackend:
    """Intensity heuristic standing in for a trained network.

    Segmentation: dark reads as tumour, bright as background, in between as
    stroma.  Dark specks narrower than ``speck_px`` are closed over first,
    so lymphocytes count as the stroma they sit in.

    Detection: lymphocyte probability follows the black top-hat, i.e. how
    much darker a pixel is than its surroundings once specks narrower than
    ``speck_px`` are closed over.  Large dark regions such as tumour score 0.

    Exact zeros are zero-padding and always read as background.
    """

    thread_safe = True

    def __init__(self, flavor: str = SEGMENTATION, patch_size: int | None = None,
                 resolution: Resolution | None = None, dark: float = 0.45,
                 bright: float = 0.85, ramp: float = 0.1, speck_px: int | None = None,
                 contrast: float = 0.3):
        if flavor not in FLAVORS:
            raise InvalidInputError(f"unknown flavor {flavor!r}")
        self.flavor = flavor
        seg = flavor == SEGMENTATION
        self.patch_size = patch_size or (512 if seg else 128)
        self.resolution = resolution or (SEG_LEVEL if seg else DET_LEVEL)
        self.dark = dark
        self.bright = bright
        self.ramp = ramp
        self.speck_px = speck_px or (5 if seg else 9)
        self.contrast = contrast

    def predict(self, patch: Raster) -> BackendOutput:
        _check_patch(self, patch)
        lum = patch.pixels.astype(np.float64)
        padding = lum == 0
        closed = ndi.grey_closing(lum, size=(self.speck_px, self.speck_px))
        if self.flavor == DETECTION:
            prob = _ramp(closed - lum, self.contrast, self.ramp)
            prob[padding] = 0.0
            return patch.with_pixels(prob)
        lum = closed
        dark = 1.0 - _ramp(lum, self.dark, self.ramp)
        dark[padding] = 0.0
        other = _ramp(lum, self.bright, self.ramp)
        other[padding] = 1.0
        tumour = np.minimum(dark, 1.0 - other)
        stroma = np.clip(1.0 - tumour - other, 0.0, 1.0)
        return {
            SegClass.TUMOUR: patch.with_pixels(tumour),
            SegClass.STROMA: patch.with_pixels(stroma),
            SegClass.OTHER: patch.with_pixels(other),
        }
