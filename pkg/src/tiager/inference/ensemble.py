from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import InvalidInputError
from ..raster import Raster
from .backends import DETECTION, SEG_CLASSES, BackendOutput


def _sorted_sum(stack: np.ndarray) -> np.ndarray:
    """Compensated sum along axis 0 after sorting the members per pixel.

    Sorting makes the result independent of member order; the compensation
    term keeps it correctly rounded in practice, so repeating every member
    gives the same mean.
    """
    stack = np.sort(stack, axis=0)
    total = np.zeros(stack.shape[1:], dtype=np.float64)
    comp = np.zeros_like(total)
    for layer in stack:
        t = total + layer
        big = np.abs(total) >= np.abs(layer)
        comp += np.where(big, (total - t) + layer, (layer - t) + total)
        total = t
    return total + comp


def ensemble_average(outputs: Sequence[Raster]) -> Raster:
    if not outputs:
        raise InvalidInputError("ensemble_average needs at least one raster")
    shape = outputs[0].shape
    for r in outputs[1:]:
        if r.shape != shape:
            raise InvalidInputError(f"shape mismatch: {r.shape} vs {shape}")
    if len(outputs) == 1:
        return outputs[0].with_pixels(outputs[0].pixels.astype(np.float64))
    stack = np.stack([r.pixels.astype(np.float64) for r in outputs])
    if (stack == stack[0]).all():
        # identical members: the exact mean is the member itself
        return outputs[0].with_pixels(np.clip(stack[0], 0.0, 1.0))
    mean = _sorted_sum(stack) / len(outputs)
    return outputs[0].with_pixels(np.clip(mean, 0.0, 1.0))


def threshold(prob: Raster, t: float) -> Raster:
    if not 0.0 <= t <= 1.0:
        raise InvalidInputError(f"threshold must be in [0, 1], got {t}")
    return prob.with_pixels(prob.pixels >= t)


@dataclass
class Ensemble:
    """Ordered set of backends whose outputs are averaged per class."""

    members: list
    _local: threading.local = field(default_factory=threading.local, init=False, repr=False)

    def __post_init__(self):
        if not self.members:
            raise InvalidInputError("an ensemble needs at least one member")
        first = self.members[0]
        for m in self.members[1:]:
            if m.flavor != first.flavor:
                raise InvalidInputError("ensemble members mix flavors")
            if m.patch_size != first.patch_size or m.resolution != first.resolution:
                raise InvalidInputError("ensemble members disagree on input geometry")

    @property
    def flavor(self) -> str:
        return self.members[0].flavor

    @property
    def patch_size(self) -> int:
        return self.members[0].patch_size

    @property
    def resolution(self):
        return self.members[0].resolution

    def _worker_members(self) -> list:
        # non-thread-safe members are cloned once per worker thread
        members = getattr(self._local, "members", None)
        if members is None:
            members = [m if m.thread_safe else m.clone() for m in self.members]
            self._local.members = members
        return members

    def predict(self, patch: Raster) -> BackendOutput:
        outputs = [m.predict(patch) for m in self._worker_members()]
        if self.flavor == DETECTION:
            return ensemble_average(outputs)
        return {cls: ensemble_average([o[cls] for o in outputs]) for cls in SEG_CLASSES}
