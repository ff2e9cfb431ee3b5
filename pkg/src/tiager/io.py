"""On-disk formats: detections JSON, mask PNGs and result JSON.

Physical coordinates in every file are microns in the base-slide frame.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image, PngImagePlugin

from .detection import Detection
from .errors import InvalidInputError, ParseError, TileIOError
from .raster import Raster, Resolution

PathLike = str | os.PathLike


def parse_json(path: PathLike):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise TileIOError(f"cannot read {path}: {exc.strerror or exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        lines = text.splitlines()
        context = lines[exc.lineno - 1].strip() if 0 < exc.lineno <= len(lines) else ""
        raise ParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}: {context!r}") from exc


def write_text(path: PathLike, text: str) -> None:
    """Write via a temporary file so readers never see a half-written file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def detections_to_dict(dets: Iterable[Detection]) -> dict:
    return {"points": [{"x_um": d.x, "y_um": d.y, "confidence": d.confidence} for d in dets]}


def save_detections(dets: Sequence[Detection], path: PathLike) -> None:
    write_text(path, dump_json(detections_to_dict(dets)))


def load_detections(path: PathLike) -> list[Detection]:
    data = parse_json(path)
    if not isinstance(data, dict) or not isinstance(data.get("points"), list):
        raise ParseError(f"{path}: expected an object with a 'points' list")
    out = []
    for i, p in enumerate(data["points"]):
        try:
            out.append(Detection(float(p["x_um"]), float(p["y_um"]), float(p.get("confidence", 1.0))))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: points[{i}]: {exc}") from exc
    return out


def save_mask(raster: Raster, path: PathLike) -> None:
    """8-bit PNG (0/255) with resolution and origin in text chunks."""
    if not raster.is_binary():
        raise InvalidInputError("save_mask needs a binary raster")
    info = PngImagePlugin.PngInfo()
    info.add_text("tiager:mpp", repr(float(raster.mpp)))
    info.add_text("tiager:origin", json.dumps([float(v) for v in raster.origin]))
    img = Image.fromarray(raster.pixels.astype(np.uint8) * 255, mode="L")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    img.save(tmp, format="PNG", pnginfo=info)
    os.replace(tmp, path)


def load_mask(path: PathLike, mpp: float | None = None) -> Raster:
    """Read a mask PNG; ``mpp`` is required if the file carries none."""
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("L"))
            text = dict(getattr(img, "text", {}) or {})
    except (OSError, ValueError) as exc:
        raise TileIOError(f"cannot read mask {path}: {exc}") from exc
    if mpp is None:
        if "tiager:mpp" not in text:
            raise InvalidInputError(f"{path}: no resolution stored; pass mpp")
        mpp = float(text["tiager:mpp"])
    origin = tuple(json.loads(text["tiager:origin"])) if "tiager:origin" in text else (0.0, 0.0)
    return Raster(arr >= 128, Resolution(mpp), origin)

