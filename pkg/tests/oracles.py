"""Independent reference implementations used as test oracles.

Everything here is deliberately naive: explicit neighbourhood scans, BFS,
O(n^2) loops and exact rationals.  None of it shares code with the package.
"""

from __future__ import annotations

import math
from collections import deque
from fractions import Fraction

import numpy as np


def disk_offsets(r: int) -> list[tuple[int, int]]:
    return [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1) if dx * dx + dy * dy <= r * r]


def _scan(arr: np.ndarray, r: int, reduce_all: bool) -> np.ndarray:
    h, w = arr.shape
    out = np.full((h, w), reduce_all, dtype=bool)
    for dy, dx in disk_offsets(r):
        shifted = np.zeros((h, w), dtype=bool)
        # shifted[y, x] = arr[y + dy, x + dx], zero outside
        ys, yd = max(0, -dy), min(h, h - dy)
        xs, xd = max(0, -dx), min(w, w - dx)
        if ys < yd and xs < xd:
            shifted[ys:yd, xs:xd] = arr[ys + dy:yd + dy, xs + dx:xd + dx]
        out = (out & shifted) if reduce_all else (out | shifted)
    return out


def morph_oracle(arr: np.ndarray, op: str, r: int) -> np.ndarray:
    """Morphology on an infinite zero plane, by shifting the disk over the grid."""
    arr = arr.astype(bool)
    if r == 0:
        return arr.copy()
    if op == "erode":
        return _scan(arr, r, True)
    if op == "dilate":
        return _scan(arr, r, False)
    if op == "open":
        return _scan(_scan(arr, r, True), r, False)
    if op == "close":
        big = np.pad(arr, r)
        big = _scan(_scan(big, r, False), r, True)
        return big[r:-r, r:-r]
    raise ValueError(op)


def flood_fill_partition(arr: np.ndarray, connectivity: int) -> set[frozenset]:
    if connectivity == 4:
        nbrs = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    else:
        nbrs = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)]
    h, w = arr.shape
    seen = np.zeros_like(arr, dtype=bool)
    parts = set()
    for y in range(h):
        for x in range(w):
            if not arr[y, x] or seen[y, x]:
                continue
            comp = []
            q = deque([(y, x)])
            seen[y, x] = True
            while q:
                cy, cx = q.popleft()
                comp.append((cy, cx))
                for dy, dx in nbrs:
                    ny, nx = cy + dy, cx + dx
                    if 0 <= ny < h and 0 <= nx < w and arr[ny, nx] and not seen[ny, nx]:
                        seen[ny, nx] = True
                        q.append((ny, nx))
            parts.add(frozenset(comp))
    return parts


def nms_oracle(points: list[tuple[float, float, float]], radius: float) -> list[int]:
    """Indices kept by greedy suppression; input rows are ``(x, y, conf)``."""
    order = sorted(range(len(points)), key=lambda i: (-points[i][2], points[i][1], points[i][0]))
    kept = []
    for i in order:
        xi, yi, _ = points[i]
        if all(math.hypot(xi - points[k][0], yi - points[k][1]) > radius for k in kept):
            kept.append(i)
    return kept


def dice_oracle(p: np.ndarray, g: np.ndarray) -> float:
    inter = a = b = 0
    for pv, gv in zip(p.ravel().tolist(), g.ravel().tolist()):
        a += bool(pv)
        b += bool(gv)
        inter += bool(pv) and bool(gv)
    return 1.0 if a + b == 0 else 2 * inter / (a + b)


def greedy_match_oracle(preds, gts, radius):
    """Exhaustive-distance greedy matching; returns (tp, fp, fn, hit flags)."""
    order = sorted(range(len(preds)), key=lambda i: (-preds[i][2], preds[i][1], preds[i][0]))
    free = set(range(len(gts)))
    hits = [False] * len(preds)
    for i in order:
        best = None
        for j in sorted(free):
            d = math.hypot(preds[i][0] - gts[j][0], preds[i][1] - gts[j][1])
            if d <= radius and (best is None or d < best[0]):
                best = (d, j)
        if best is not None:
            free.discard(best[1])
            hits[i] = True
    tp = sum(hits)
    return tp, len(preds) - tp, len(gts) - tp, hits


def froc_sweep_oracle(preds, gts, radius, area_mm2, targets):
    """Re-match from scratch at every distinct confidence threshold."""
    thresholds = sorted({p[2] for p in preds}, reverse=True)
    curve = []
    for t in thresholds:
        kept = [p for p in preds if p[2] >= t]
        tp, fp, _, _ = greedy_match_oracle(kept, gts, radius)
        curve.append((fp / area_mm2, tp / len(gts)))
    sens = []
    for target in targets:
        ok = [s for f, s in curve if f <= target]
        sens.append(max(ok) if ok else 0.0)
    return sum(sens) / len(sens)


def tils_oracle(n: int, a_tas, a_til) -> int:
    raw = Fraction(n) * Fraction(a_til) * 100 / Fraction(a_tas)
    # round half up on a non-negative rational
    q, rem = divmod(raw.numerator * 2 + raw.denominator, 2 * raw.denominator)
    return max(0, min(100, q))


def pearson_oracle(xs, ys) -> float:
    x = [Fraction(v) for v in xs]
    y = [Fraction(v) for v in ys]
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    return float(sxy) / math.sqrt(float(sxx) * float(syy))
