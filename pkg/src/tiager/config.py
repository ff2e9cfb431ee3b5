"""Pipeline configuration: JSON file <-> nested dataclasses.

Unknown keys are rejected at every level, so a misspelled option fails
loudly instead of silently falling back to its default.

Example (every key optional)::

    {
      "backend": "passthrough",
      "workers": 4,
      "seg": {"open_radius_px": 5, "threshold": {"tumour": 0.5, "stroma": 0.5}},
      "det": {"threshold": 0.5, "nms_radius_um": 8.0, "stitch_mode": "average"},
      "bulk": {"max_edge_um": 250.0},
      "score": {"a_til_um2": 201.06192982974676},
      "eval": {"hit_radius_um": 8.0, "froc_targets": [10, 20, 50, 100, 200, 300]},
      "external": {"seg_command": ["python", "-m", "tiager.inference.worker"]}
    }
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .bulk import BulkParams
from .errors import ConfigError, InvalidInputError

BACKENDS = ("passthrough", "luminance", "external")


def _require(cond: bool, msg: str):
    if not cond:
        raise ConfigError(msg)


@dataclass(frozen=True)
class ClassThresholds:
    tumour: float = 0.5
    stroma: float = 0.5

    def __post_init__(self):
        for name in ("tumour", "stroma"):
            v = getattr(self, name)
            _require(0.0 <= v <= 1.0, f"seg.threshold.{name} must be in [0, 1], got {v}")


@dataclass(frozen=True)
class SegConfig:
    patch: int = 512
    stride: int = 256
    pad: int = 128
    crop: int = 256
    open_radius_px: int = 5
    threshold: ClassThresholds = field(default_factory=ClassThresholds)
    ensemble_size: int = 5

    def __post_init__(self):
        _require(self.patch > 0, "seg.patch must be positive")
        _require(0 < self.stride <= self.patch, "seg.stride must be in (0, patch]")
        _require(self.pad >= 0, "seg.pad must be >= 0")
        _require(0 < self.crop <= self.patch, "seg.crop must be in (0, patch]")
        _require(self.crop >= self.stride, "seg.crop must be >= seg.stride or crops leave gaps")
        _require(self.pad >= -(-(self.patch - self.crop) // 2),
                 "seg.pad must be at least the crop margin or slide edges are never covered")
        _require(self.open_radius_px >= 0, "seg.open_radius_px must be >= 0")
        _require(self.ensemble_size >= 1, "seg.ensemble_size must be >= 1")


@dataclass(frozen=True)
class DetConfig:
    tile: int = 1024
    patch: int = 128
    stride: int = 100
    threshold: float = 0.5
    stitch_mode: str = "average"
    connectivity: int = 8
    min_area_px: int = 4
    nms_radius_um: float = 8.0
    gt_radius_px: int = 3
    ensemble_size: int = 3

    def __post_init__(self):
        _require(self.tile > 0 and self.patch > 0, "det.tile and det.patch must be positive")
        _require(self.patch <= self.tile, "det.patch must not exceed det.tile")
        _require(0 < self.stride <= self.patch, "det.stride must be in (0, patch]")
        _require(0.0 <= self.threshold <= 1.0, "det.threshold must be in [0, 1]")
        _require(self.stitch_mode in ("average", "max"), "det.stitch_mode must be 'average' or 'max'")
        _require(self.connectivity in (4, 8), "det.connectivity must be 4 or 8")
        _require(self.min_area_px >= 1, "det.min_area_px must be >= 1")
        _require(self.nms_radius_um > 0, "det.nms_radius_um must be positive")
        _require(self.gt_radius_px >= 0, "det.gt_radius_px must be >= 0")
        _require(self.ensemble_size >= 1, "det.ensemble_size must be >= 1")


@dataclass(frozen=True)
class ScoreConfig:
    # a TIL read as a disk of 16 um diameter
    a_til_um2: float = math.pi * 8.0 ** 2

    def __post_init__(self):
        _require(self.a_til_um2 > 0, "score.a_til_um2 must be positive")


@dataclass(frozen=True)
class EvalConfig:
    hit_radius_um: float = 8.0
    froc_targets: tuple[float, ...] = (10.0, 20.0, 50.0, 100.0, 200.0, 300.0)

    def __post_init__(self):
        _require(self.hit_radius_um > 0, "eval.hit_radius_um must be positive")
        t = list(self.froc_targets)
        _require(len(t) > 0, "eval.froc_targets must not be empty")
        _require(all(a < b for a, b in zip(t, t[1:])), "eval.froc_targets must be strictly ascending")
        _require(t[0] >= 0, "eval.froc_targets must be non-negative")


@dataclass(frozen=True)
class ExternalConfig:
    seg_command: tuple[str, ...] = ()
    det_command: tuple[str, ...] = ()


@dataclass(frozen=True)
class PipelineConfig:
    backend: str = "passthrough"
    workers: int = 0  # 0 means one per logical core
    seg: SegConfig = field(default_factory=SegConfig)
    det: DetConfig = field(default_factory=DetConfig)
    bulk: BulkParams = field(default_factory=BulkParams)
    score: ScoreConfig = field(default_factory=ScoreConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    external: ExternalConfig = field(default_factory=ExternalConfig)

    def __post_init__(self):
        _require(self.backend in BACKENDS, f"backend must be one of {BACKENDS}, got {self.backend!r}")
        _require(self.workers >= 0, "workers must be >= 0")
        if self.backend == "external":
            _require(bool(self.external.seg_command) and bool(self.external.det_command),
                     "backend 'external' needs external.seg_command and external.det_command")

    @property
    def worker_count(self) -> int:
        return self.workers or os.cpu_count() or 1

    def to_dict(self) -> dict:
        return _to_plain(self)

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        return _build(cls, data, "")

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, tuple):
        return [_to_plain(v) for v in obj]
    return obj


def _coerce(value, tp, where: str):
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        _require(isinstance(value, dict), f"{where} must be an object")
        return _build(tp, value, where + ".")
    if origin is tuple:
        _require(isinstance(value, list), f"{where} must be a list")
        (item_tp, _) = typing.get_args(tp)
        return tuple(_coerce(v, item_tp, f"{where}[{i}]") for i, v in enumerate(value))
    if tp is bool:
        _require(isinstance(value, bool), f"{where} must be a boolean")
        return value
    if tp is int:
        _require(isinstance(value, int) and not isinstance(value, bool), f"{where} must be an integer")
        return value
    if tp is float:
        _require(isinstance(value, (int, float)) and not isinstance(value, bool), f"{where} must be a number")
        _require(math.isfinite(value), f"{where} must be finite")
        return float(value)
    if tp is str:
        _require(isinstance(value, str), f"{where} must be a string")
        return value
    raise TypeError(f"unsupported config type {tp!r}")


def _build(cls, data: dict, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix.rstrip('.') or 'config'} must be an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(prefix + k for k in unknown)}")
    kwargs = {k: _coerce(v, hints[k], prefix + k) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except InvalidInputError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | os.PathLike | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    return PipelineConfig.from_dict(data)


def dump_config(cfg: PipelineConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True)
