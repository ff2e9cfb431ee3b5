"""Segmentation and detection metrics: Dice, matching, F1, FROC, Pearson."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidInputError, UndefinedMetricError
from .raster import Raster


def dice(pred: Raster, gt: Raster) -> float:
    """``2|P & G| / (|P| + |G|)``; two empty masks agree perfectly."""
    if pred.shape != gt.shape:
        raise InvalidInputError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    if not (pred.is_binary() and gt.is_binary()):
        raise InvalidInputError("dice needs binary masks")
    p = pred.pixels.astype(bool)
    g = gt.pixels.astype(bool)
    denom = int(np.count_nonzero(p)) + int(np.count_nonzero(g))
    if denom == 0:
        return 1.0
    return 2.0 * int(np.count_nonzero(p & g)) / denom


def combine_dice(dice_tumour: float, dice_stroma: float) -> float:
    return (dice_tumour + dice_stroma) / 2.0


def mean_tumour_stroma_dice(pred_t: Raster, gt_t: Raster, pred_s: Raster, gt_s: Raster) -> float:
    return combine_dice(dice(pred_t, gt_t), dice(pred_s, gt_s))


@dataclass
class MatchResult:
    tp: int
    fp: int
    fn: int
    pairs: list[tuple[int, int, float]] = field(default_factory=list)
    # cumulative (tp, fp) after each prediction in priority order
    trace: list[tuple[int, int]] = field(default_factory=list, repr=False)


def _point_array(points) -> np.ndarray:
    out = []
    for p in points:
        if hasattr(p, "x"):
            out.append((p.x, p.y))
        else:
            out.append((p[0], p[1]))
    return np.array(out, dtype=np.float64).reshape(-1, 2)


def priority_order(preds: Sequence) -> list[int]:
    """Prediction indices by descending confidence, ties by (y, x)."""
    return sorted(range(len(preds)), key=lambda i: (-preds[i].confidence, preds[i].y, preds[i].x))


def match_detections(preds: Sequence, gts: Sequence, hit_radius: float) -> MatchResult:
    """Greedy confidence-ordered matching.

    Each prediction, highest confidence first, claims the nearest still
    unmatched ground-truth point within ``hit_radius`` (lowest index on a
    distance tie).
    """
    if not hit_radius > 0:
        raise InvalidInputError(f"hit radius must be positive, got {hit_radius}")
    gt_pts = _point_array(gts)
    taken = np.zeros(len(gt_pts), dtype=bool)
    tree = cKDTree(gt_pts) if len(gt_pts) else None
    pairs = []
    trace = []
    tp = fp = 0
    for i in priority_order(preds):
        best = None
        if tree is not None:
            p = np.array([preds[i].x, preds[i].y])
            cand = [j for j in tree.query_ball_point(p, hit_radius) if not taken[j]]
            if cand:
                cand = np.array(sorted(cand))
                d = np.hypot(*(gt_pts[cand] - p).T)
                k = int(np.argmin(d))
                best = (int(cand[k]), float(d[k]))
        if best is None:
            fp += 1
        else:
            taken[best[0]] = True
            pairs.append((i, best[0], best[1]))
            tp += 1
        trace.append((tp, fp))
    return MatchResult(tp=tp, fp=fp, fn=len(gt_pts) - tp, pairs=pairs, trace=trace)


def f1_score(recall: float, precision: float) -> float:
    if recall + precision == 0:
        return 0.0
    return 2.0 * recall * precision / (recall + precision)


def f1_precision_recall(m: MatchResult) -> tuple[float, float, float]:
    """Returns ``(f1, recall, precision)``."""
    precision = m.tp / (m.tp + m.fp) if m.tp + m.fp else 0.0
    recall = m.tp / (m.tp + m.fn) if m.tp + m.fn else 0.0
    return f1_score(recall, precision), recall, precision


@dataclass
class FrocCurve:
    points: list[tuple[float, float]]  # (fp per mm2, sensitivity)
    targets: tuple[float, ...]
    sensitivities: tuple[float, ...]  # at each target
    score: float
    thresholds: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "score": self.score,
            "targets_fp_per_mm2": list(self.targets),
            "sensitivity_at_targets": list(self.sensitivities),
            "curve": [{"threshold": t, "fp_per_mm2": f, "sensitivity": s}
                      for t, (f, s) in zip(self.thresholds, self.points)],
        }


def froc(preds: Sequence, gts: Sequence, hit_radius: float, area_mm2: float,
         targets: Sequence[float] = (10, 20, 50, 100, 200, 300)) -> FrocCurve:
    """Sensitivity vs false positives per mm2 over all confidence thresholds.

    Greedy matching in confidence order means the matching at a threshold is
    a prefix of the full matching, so one pass gives every operating point.
    The score averages, over ``targets``, the best sensitivity reached
    without exceeding each false-positive rate.
    """
    return froc_multi([(preds, gts, area_mm2)], hit_radius, targets)


def froc_multi(slides: Sequence[tuple[Sequence, Sequence, float]], hit_radius: float,
               targets: Sequence[float] = (10, 20, 50, 100, 200, 300)) -> FrocCurve:
    """FROC pooled over slides given as ``(preds, gts, area_mm2)`` triples.

    Matching stays within each slide; a global threshold then counts hits
    and false positives across all of them against the summed area.
    """
    n_gt = sum(len(g) for _, g, _ in slides)
    if n_gt == 0:
        raise UndefinedMetricError("FROC sensitivity is undefined without ground truth")
    area = 0.0
    for _, _, a in slides:
        if a is None or not a > 0:
            raise InvalidInputError(f"area must be positive, got {a}")
        area += a
    targets = tuple(float(t) for t in targets)
    if not targets or any(a >= b for a, b in zip(targets, targets[1:])):
        raise InvalidInputError("FROC targets must be non-empty and ascending")

    scored = []  # (confidence, is_hit)
    for preds, gts, _ in slides:
        hits = {i for i, _, _ in match_detections(preds, gts, hit_radius).pairs}
        scored.extend((float(p.confidence), i in hits) for i, p in enumerate(preds))
    scored.sort(key=lambda c: -c[0])

    points = []
    thresholds = []
    tp = fp = 0
    for k, (conf, hit) in enumerate(scored):
        tp += hit
        fp += not hit
        if k + 1 == len(scored) or scored[k + 1][0] != conf:
            thresholds.append(conf)
            points.append((fp / area, tp / n_gt))

    sens = []
    for t in targets:
        reached = [s for f, s in points if f <= t]
        sens.append(max(reached) if reached else 0.0)
    return FrocCurve(points, targets, tuple(sens), float(np.mean(sens)), thresholds)


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise InvalidInputError("pearson needs two equal-length 1-D sequences")
    if x.size < 2:
        raise InvalidInputError("pearson needs at least two samples")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise UndefinedMetricError("correlation is undefined for a constant sequence")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = math.fsum(dx * dx)
    syy = math.fsum(dy * dy)
    if sxx == 0 or syy == 0:
        raise UndefinedMetricError("correlation is undefined for a constant sequence")
    r = math.fsum(dx * dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))
