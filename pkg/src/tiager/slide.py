"""Tiled slide store: a directory of PNG tiles plus a JSON manifest.

Layout::

    slide.json                 manifest (see SlideManifest)
    tiles/L{level}_X{col}_Y{row}.png

Tiles are 8-bit greyscale; reads return float64 rasters scaled to [0, 1].
"""

from __future__ import annotations

import functools
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from PIL import Image

from .errors import InvalidInputError, ManifestError, TileIOError
from .io import dump_json, load_detections, load_mask, parse_json, write_text
from .raster import Raster, Resolution, _box_downscale, scale_factor

TILE_NAME = "L{level}_X{col}_Y{row}.png"


@dataclass(frozen=True)
class LevelInfo:
    level: int
    mpp: float
    width: int
    height: int
    tile_size: int


@dataclass(frozen=True)
class SlideManifest:
    slide_id: str
    mpp: float
    width: int
    height: int
    tile_dir: Path
    levels: tuple[LevelInfo, ...]
    masks: Mapping[str, Path] = field(default_factory=dict)
    gt_detections: Path | None = None
    root: Path = Path(".")

    @property
    def area_mm2(self) -> float:
        return self.width * self.height * self.mpp ** 2 / 1e6

    def level_info(self, level: int) -> LevelInfo:
        for info in self.levels:
            if info.level == level:
                return info
        raise ManifestError(f"slide {self.slide_id!r} has no level {level}")

    def to_dict(self) -> dict:
        def rel(p: Path) -> str:
            return os.path.relpath(p, self.root)

        out = {
            "slide_id": self.slide_id,
            "mpp": self.mpp,
            "width": self.width,
            "height": self.height,
            "tile_dir": rel(self.tile_dir),
            "levels": [vars(info).copy() for info in self.levels],
        }
        if self.masks:
            out["masks"] = {k: rel(v) for k, v in sorted(self.masks.items())}
        if self.gt_detections is not None:
            out["gt_detections"] = rel(self.gt_detections)
        return out


_MANIFEST_KEYS = {"slide_id", "mpp", "width", "height", "tile_dir", "levels", "masks", "gt_detections"}
_LEVEL_KEYS = {"level", "mpp", "width", "height", "tile_size"}


def _field(d: dict, key: str, kind, where: str):
    if key not in d:
        raise ManifestError(f"{where}: missing '{key}'")
    v = d[key]
    if kind is int and (not isinstance(v, int) or isinstance(v, bool)):
        raise ManifestError(f"{where}: '{key}' must be an integer")
    if kind is float and (not isinstance(v, (int, float)) or isinstance(v, bool)):
        raise ManifestError(f"{where}: '{key}' must be a number")
    if kind is str and not isinstance(v, str):
        raise ManifestError(f"{where}: '{key}' must be a string")
    return kind(v)


def read_manifest(path: str | os.PathLike) -> SlideManifest:
    path = Path(path)
    data = parse_json(path)
    where = str(path)
    if not isinstance(data, dict):
        raise ManifestError(f"{where}: manifest must be an object")
    unknown = set(data) - _MANIFEST_KEYS
    if unknown:
        raise ManifestError(f"{where}: unknown key(s) {sorted(unknown)}")
    root = path.parent
    mpp = _field(data, "mpp", float, where)
    width = _field(data, "width", int, where)
    height = _field(data, "height", int, where)
    if not mpp > 0:
        raise ManifestError(f"{where}: mpp must be positive")
    if width <= 0 or height <= 0:
        raise ManifestError(f"{where}: width and height must be positive")
    levels = []
    for i, lv in enumerate(data.get("levels") or []):
        lw = f"{where}: levels[{i}]"
        if not isinstance(lv, dict) or set(lv) - _LEVEL_KEYS:
            raise ManifestError(f"{lw}: expected keys {sorted(_LEVEL_KEYS)}")
        info = LevelInfo(*(_field(lv, k, t, lw) for k, t in
                           (("level", int), ("mpp", float), ("width", int), ("height", int), ("tile_size", int))))
        if info.mpp <= 0 or info.tile_size <= 0:
            raise ManifestError(f"{lw}: mpp and tile_size must be positive")
        # each level must span the base extent to within one of its pixels
        for dim, base in ((info.width, width), (info.height, height)):
            expect = base * mpp / info.mpp
            if abs(dim - expect) > 1.0:
                raise ManifestError(f"{lw}: size {info.width}x{info.height} inconsistent with base "
                                    f"{width}x{height} at {mpp} mpp")
        levels.append(info)
    if not levels:
        raise ManifestError(f"{where}: no levels")
    if len({lv.level for lv in levels}) != len(levels):
        raise ManifestError(f"{where}: duplicate level numbers")
    tile_dir = root / _field(data, "tile_dir", str, where)
    if not tile_dir.is_dir():
        raise ManifestError(f"{where}: tile directory {tile_dir} does not exist")
    masks = {}
    for name, rel in (data.get("masks") or {}).items():
        p = root / rel
        if not p.is_file():
            raise ManifestError(f"{where}: mask {name!r} file {p} does not exist")
        masks[name] = p
    gt = None
    if data.get("gt_detections") is not None:
        gt = root / data["gt_detections"]
        if not gt.is_file():
            raise ManifestError(f"{where}: gt_detections file {gt} does not exist")
    return SlideManifest(
        slide_id=_field(data, "slide_id", str, where), mpp=mpp, width=width, height=height,
        tile_dir=tile_dir, levels=tuple(sorted(levels, key=lambda lv: lv.level)),
        masks=masks, gt_detections=gt, root=root)


class LevelReader:
    """Windowed reads from one pyramid level; safe for concurrent use."""

    origin = (0.0, 0.0)

    def __init__(self, manifest: SlideManifest, info: LevelInfo, cache_tiles: int = 256):
        self.manifest = manifest
        self.info = info
        self.resolution = Resolution(info.mpp)
        self._tile = functools.lru_cache(maxsize=cache_tiles)(self._load_tile)

    @property
    def width(self) -> int:
        return self.info.width

    @property
    def height(self) -> int:
        return self.info.height

    def tile_path(self, col: int, row: int) -> Path:
        return self.manifest.tile_dir / TILE_NAME.format(level=self.info.level, col=col, row=row)

    def _load_tile(self, col: int, row: int) -> np.ndarray:
        path = self.tile_path(col, row)
        ts = self.info.tile_size
        expect = (min(ts, self.height - row * ts), min(ts, self.width - col * ts))
        try:
            with Image.open(path) as img:
                arr = np.asarray(img.convert("L"))
        except FileNotFoundError as exc:
            raise TileIOError(f"missing tile {path.name} in {path.parent}") from exc
        except OSError as exc:
            raise TileIOError(f"cannot decode tile {path.name}: {exc}") from exc
        if arr.shape != expect:
            raise ManifestError(f"tile {path.name} is {arr.shape[1]}x{arr.shape[0]}, "
                                f"expected {expect[1]}x{expect[0]}")
        arr.setflags(write=False)
        return arr

    def read_uint8(self, x: int, y: int, w: int, h: int) -> np.ndarray:
        out = np.zeros((h, w), dtype=np.uint8)
        x0, y0 = max(x, 0), max(y, 0)
        x1, y1 = min(x + w, self.width), min(y + h, self.height)
        if x1 <= x0 or y1 <= y0:
            return out
        ts = self.info.tile_size
        for row in range(y0 // ts, (y1 - 1) // ts + 1):
            for col in range(x0 // ts, (x1 - 1) // ts + 1):
                tile = self._tile(col, row)
                tx0, ty0 = col * ts, row * ts
                ax0, ay0 = max(x0, tx0), max(y0, ty0)
                ax1, ay1 = min(x1, tx0 + tile.shape[1]), min(y1, ty0 + tile.shape[0])
                out[ay0 - y:ay1 - y, ax0 - x:ax1 - x] = tile[ay0 - ty0:ay1 - ty0, ax0 - tx0:ax1 - tx0]
        return out

    def read(self, x: int, y: int, w: int, h: int) -> Raster:
        pixels = self.read_uint8(x, y, w, h).astype(np.float64) / 255.0
        return Raster(pixels, self.resolution, (float(x), float(y)))


class DownscaledReader:
    """Box-averaged view of a finer level at an integer downscale factor."""

    origin = (0.0, 0.0)

    def __init__(self, base: LevelReader, factor: int, resolution: Resolution):
        self.base = base
        self.factor = factor
        self.resolution = resolution
        self.width = -(-base.width // factor)
        self.height = -(-base.height // factor)

    def read(self, x: int, y: int, w: int, h: int) -> Raster:
        k = self.factor
        fine = self.base.read(x * k, y * k, w * k, h * k).pixels
        return Raster(_box_downscale(fine, k), self.resolution, (float(x), float(y)))


class Slide:
    def __init__(self, manifest: SlideManifest):
        self.manifest = manifest
        self._levels = {info.level: LevelReader(manifest, info) for info in manifest.levels}

    @property
    def slide_id(self) -> str:
        return self.manifest.slide_id

    def level(self, level: int) -> LevelReader:
        if level not in self._levels:
            raise ManifestError(f"slide {self.slide_id!r} has no level {level}")
        return self._levels[level]

    def read_window(self, level: int, x: int, y: int, w: int, h: int) -> Raster:
        return self.level(level).read(x, y, w, h)

    def source_at(self, resolution: Resolution):
        """Reader at ``resolution``: a stored level, or a finer one downscaled."""
        for reader in self._levels.values():
            if math.isclose(reader.resolution.mpp, resolution.mpp, rel_tol=1e-9):
                return reader
        for reader in sorted(self._levels.values(), key=lambda r: -r.resolution.mpp):
            if reader.resolution.mpp >= resolution.mpp:
                continue
            try:
                f = scale_factor(reader.resolution, resolution)
            except InvalidInputError:
                continue
            if f.denominator == 1:
                return DownscaledReader(reader, f.numerator, resolution)
        raise ManifestError(f"slide {self.slide_id!r} cannot be read at {resolution.mpp} mpp")

    def mask(self, name: str) -> Raster:
        if name not in self.manifest.masks:
            raise ManifestError(f"slide {self.slide_id!r} has no {name!r} mask")
        return load_mask(self.manifest.masks[name])

    def has_mask(self, name: str) -> bool:
        return name in self.manifest.masks

    def gt_detections(self):
        if self.manifest.gt_detections is None:
            raise ManifestError(f"slide {self.slide_id!r} has no ground-truth detections")
        return load_detections(self.manifest.gt_detections)


def load_slide(manifest_path: str | os.PathLike) -> Slide:
    return Slide(read_manifest(manifest_path))


def write_slide(out_dir: str | os.PathLike, slide_id: str, levels: Mapping[int, tuple[np.ndarray, float]],
                tile_size: int = 512, masks: Mapping[str, Path] | None = None,
                gt_detections: Path | None = None) -> Path:
    """Write a tile store and its manifest; returns the manifest path.

    ``levels`` maps level number to ``(uint8 image, mpp)``; level 0 is the base.
    """
    out = Path(out_dir)
    tile_dir = out / "tiles"
    tile_dir.mkdir(parents=True, exist_ok=True)
    if 0 not in levels:
        raise InvalidInputError("level 0 (base) is required")
    infos = []
    for level, (img, mpp) in sorted(levels.items()):
        img = np.asarray(img)
        if img.dtype != np.uint8 or img.ndim != 2:
            raise InvalidInputError("slide levels must be 2-D uint8 arrays")
        h, w = img.shape
        for row in range(-(-h // tile_size)):
            for col in range(-(-w // tile_size)):
                tile = img[row * tile_size:(row + 1) * tile_size, col * tile_size:(col + 1) * tile_size]
                Image.fromarray(tile, mode="L").save(
                    tile_dir / TILE_NAME.format(level=level, col=col, row=row), format="PNG")
        infos.append(LevelInfo(level, float(mpp), w, h, tile_size))
    base = infos[0]
    manifest = SlideManifest(
        slide_id=slide_id, mpp=base.mpp, width=base.width, height=base.height,
        tile_dir=tile_dir, levels=tuple(infos), masks=dict(masks or {}),
        gt_detections=gt_detections, root=out)
    path = out / "slide.json"
    write_text(path, dump_json(manifest.to_dict()))
    return path
