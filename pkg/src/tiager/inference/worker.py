"""Reference worker for :class:`ExternalBackend`.

Serves the luminance heuristic over stdin/stdout.  Real model runtimes
replace this script; only the framing has to match::

    python -m tiager.inference.worker --flavor detection --patch-size 128
"""

import argparse
import sys

import numpy as np

from ..raster import Raster
from .backends import FLAVORS, SEG_CLASSES, SEGMENTATION, LuminanceBackend
from .external import read_frame, write_frame


def serve(flavor: str, patch_size: int, stdin=None, stdout=None) -> int:
    stdin = stdin or sys.stdin.buffer
    stdout = stdout or sys.stdout.buffer
    backend = LuminanceBackend(flavor, patch_size=patch_size)
    served = 0
    while True:
        frame = read_frame(stdin)
        if frame is None:
            return served
        patch = Raster(frame.astype(np.float64).reshape(patch_size, patch_size),
                       backend.resolution)
        out = backend.predict(patch)
        if flavor == SEGMENTATION:
            planes = np.stack([out[c].pixels for c in SEG_CLASSES])
        else:
            planes = out.pixels
        write_frame(stdout, planes)
        served += 1


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--flavor", choices=FLAVORS, default=SEGMENTATION)
    parser.add_argument("--patch-size", type=int, default=None)
    args = parser.parse_args(argv)
    size = args.patch_size or (512 if args.flavor == SEGMENTATION else 128)
    serve(args.flavor, size)


if __name__ == "__main__":
    main()
