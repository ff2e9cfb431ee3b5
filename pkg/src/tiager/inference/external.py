"""Subprocess backend speaking a length-prefixed float32 protocol.

Each request is one patch: a 4-byte little-endian unsigned length followed by
that many bytes of row-major float32 pixels.  The reply uses the same framing
and carries ``C * h * w`` float32 values, channel-major: three channels
(tumour, stroma, other) for segmentation, one for detection.  Closing the
worker's stdin ends the session.
"""

from __future__ import annotations

import struct
import subprocess
import threading
from typing import BinaryIO, Sequence

import numpy as np

from ..errors import BackendError, InvalidInputError
from ..raster import DET_LEVEL, SEG_LEVEL, Raster, Resolution
from .backends import DETECTION, FLAVORS, SEG_CLASSES, SEGMENTATION

HEADER = struct.Struct("<I")


def write_frame(stream: BinaryIO, array: np.ndarray) -> None:
    payload = np.ascontiguousarray(array, dtype="<f4").tobytes()
    stream.write(HEADER.pack(len(payload)))
    stream.write(payload)
    stream.flush()


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    chunks = []
    while n:
        chunk = stream.read(n)
        if not chunk:
            break
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


def read_frame(stream: BinaryIO) -> np.ndarray | None:
    """Read one frame as a flat float32 array, or None at end of stream."""
    head = _read_exact(stream, HEADER.size)
    if not head:
        return None
    if len(head) != HEADER.size:
        raise BackendError("truncated frame header")
    (length,) = HEADER.unpack(head)
    if length % 4:
        raise BackendError(f"frame length {length} is not a multiple of 4")
    payload = _read_exact(stream, length)
    if len(payload) != length:
        raise BackendError(f"truncated frame: expected {length} bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype="<f4")


class ExternalBackend:
    """Runs a model in a child process, one patch per request.

    Requests are serialised with a lock, so one instance can be shared by
    every worker thread.
    """

    thread_safe = True

    def __init__(self, command: Sequence[str], flavor: str = SEGMENTATION,
                 patch_size: int | None = None, resolution: Resolution | None = None):
        if flavor not in FLAVORS:
            raise InvalidInputError(f"unknown flavor {flavor!r}")
        if not command:
            raise InvalidInputError("external backend needs a command")
        self.command = list(command)
        self.flavor = flavor
        seg = flavor == SEGMENTATION
        self.patch_size = patch_size or (512 if seg else 128)
        self.resolution = resolution or (SEG_LEVEL if seg else DET_LEVEL)
        self.channels = len(SEG_CLASSES) if seg else 1
        self._proc: subprocess.Popen | None = None
        self._lock = threading.Lock()

    def _ensure_started(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            try:
                self._proc = subprocess.Popen(
                    self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE)
            except OSError as exc:
                raise BackendError(f"cannot start {self.command[0]!r}: {exc}") from exc
        return self._proc

    def predict(self, patch: Raster):
        if patch.width != self.patch_size or patch.height != self.patch_size:
            raise InvalidInputError(
                f"external backend expects {self.patch_size}x{self.patch_size} patches")
        with self._lock:
            proc = self._ensure_started()
            try:
                write_frame(proc.stdin, patch.pixels)
                reply = read_frame(proc.stdout)
            except (BrokenPipeError, OSError) as exc:
                raise BackendError(f"external backend died: {exc}") from exc
        if reply is None:
            raise BackendError("external backend closed its output")
        n = patch.width * patch.height
        if reply.size != self.channels * n:
            raise BackendError(
                f"expected {self.channels} channel(s) of {n} values, got {reply.size} values")
        planes = np.clip(reply.astype(np.float64), 0.0, 1.0).reshape(self.channels, patch.height, patch.width)
        if self.flavor == DETECTION:
            return patch.with_pixels(planes[0])
        return {cls: patch.with_pixels(planes[i]) for i, cls in enumerate(SEG_CLASSES)}

    def close(self) -> None:
        with self._lock:
            if self._proc is not None:
                if self._proc.stdin:
                    self._proc.stdin.close()
                self._proc.wait(timeout=10)
                if self._proc.stdout:
                    self._proc.stdout.close()
                self._proc = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
