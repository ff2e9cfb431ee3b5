"""Command-line interface.

Every stage command writes its artifacts into ``--out`` and records them in
``OUT/index.json``, which ``evaluate`` can read back as predictions::

    tiager segment  --manifest slide.json --config cfg.json --out run/
    tiager bulk     --manifest slide.json --config cfg.json --out run/
    tiager detect   --manifest slide.json --config cfg.json --out run/
    tiager score    --manifest slide.json --config cfg.json --out run/
    tiager render   --manifest slide.json --config cfg.json --out run/
    tiager evaluate --task dice --gt slide.json --pred run/ --config cfg.json --out eval/

Exit status is 0 on success, 1 on a pipeline failure and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import json
import logging
import os
import sys
from contextlib import ExitStack
from pathlib import Path

import numpy as np

from . import __version__
from .bulk import TilsResult, fit_to, run_pipeline, tumour_associated_stroma, tumour_bulk
from .config import PipelineConfig, load_config
from .detection import detect, nms
from .errors import ManifestError, TiagerError
from .inference import (
    DETECTION,
    SEGMENTATION,
    Ensemble,
    ExternalBackend,
    LuminanceBackend,
    PassthroughDetection,
    PassthroughSegmentation,
    SegClass,
    run_detection,
    run_segmentation,
)
from .io import dump_json, load_detections, load_mask, parse_json, save_detections, save_mask, write_text
from .metrics import MatchResult, dice, f1_precision_recall, froc_multi, match_detections, pearson
from .raster import DET_LEVEL, SEG_LEVEL, ArraySource, Raster, Resolution, resample
from .slide import Slide, load_slide, read_manifest

log = logging.getLogger("tiager")

TUMOUR_PNG = "tumour_mask.png"
STROMA_PNG = "stroma_mask.png"
BULK_PNG = "bulk_mask.png"
TAS_PNG = "tas_mask.png"
DETECTIONS_JSON = "detections.json"
RESULT_JSON = "tils_result.json"
OVERLAY_PNG = "overlay.png"
INDEX_JSON = "index.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def setup_logging() -> None:
    level = os.environ.get("TIAGER_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


# -- backends ---------------------------------------------------------------

def _mask_source(slide: Slide, name: str, res: Resolution, width: int, height: int) -> ArraySource:
    m = resample(slide.mask(name), res)
    return ArraySource(fit_to(m, width, height))


def build_ensembles(slide: Slide, cfg: PipelineConfig, stack: ExitStack) -> tuple[Ensemble, Ensemble]:
    seg_res, det_res = SEG_LEVEL, DET_LEVEL
    n_seg, n_det = cfg.seg.ensemble_size, cfg.det.ensemble_size
    if cfg.backend == "passthrough":
        seg_src = slide.source_at(seg_res)
        sources = {
            SegClass.TUMOUR: _mask_source(slide, "tumour", seg_res, seg_src.width, seg_src.height),
            SegClass.STROMA: _mask_source(slide, "stroma", seg_res, seg_src.width, seg_src.height),
        }
        seg = [PassthroughSegmentation(sources, cfg.seg.patch, seg_res)] * n_seg
        points = [(d.x, d.y) for d in slide.gt_detections()]
        det = [PassthroughDetection(points, cfg.det.patch, det_res, cfg.det.gt_radius_px)] * n_det
    elif cfg.backend == "luminance":
        seg = [LuminanceBackend(SEGMENTATION, cfg.seg.patch, seg_res)] * n_seg
        det = [LuminanceBackend(DETECTION, cfg.det.patch, det_res)] * n_det
    else:
        seg = [stack.enter_context(ExternalBackend(cfg.external.seg_command, SEGMENTATION, cfg.seg.patch, seg_res))
               for _ in range(n_seg)]
        det = [stack.enter_context(ExternalBackend(cfg.external.det_command, DETECTION, cfg.det.patch, det_res))
               for _ in range(n_det)]
    return Ensemble(list(seg)), Ensemble(list(det))


def _tissue(slide: Slide) -> Raster | None:
    return slide.mask("tissue") if slide.has_mask("tissue") else None


# -- outputs ----------------------------------------------------------------

def _update_index(out: Path, slide: Slide, **entries) -> None:
    path = out / INDEX_JSON
    index = parse_json(path) if path.exists() else {"slides": {}}
    slot = index["slides"].setdefault(slide.slide_id, {})
    slot["area_mm2"] = slide.manifest.area_mm2
    slot.update(entries)
    write_text(path, dump_json(index))


def _result_json(result: TilsResult) -> str:
    return json.dumps(result.to_dict())


def _segmentation(slide, cfg, stack, out: Path, reuse: bool):
    if reuse and (out / TUMOUR_PNG).exists() and (out / STROMA_PNG).exists():
        return load_mask(out / TUMOUR_PNG), load_mask(out / STROMA_PNG)
    seg_ens, _ = build_ensembles(slide, cfg, stack)
    roi = _tissue(slide)
    src = slide.source_at(seg_ens.resolution)
    if roi is not None:
        roi = fit_to(resample(roi, src.resolution), src.width, src.height)
    tumour, stroma = run_segmentation(src, seg_ens, cfg, roi=roi)
    save_mask(tumour, out / TUMOUR_PNG)
    save_mask(stroma, out / STROMA_PNG)
    _update_index(out, slide, tumour=TUMOUR_PNG, stroma=STROMA_PNG)
    return tumour, stroma


def _bulk(slide, cfg, stack, out: Path, reuse: bool):
    if reuse and (out / BULK_PNG).exists() and (out / TAS_PNG).exists():
        return load_mask(out / BULK_PNG), load_mask(out / TAS_PNG)
    tumour, stroma = _segmentation(slide, cfg, stack, out, reuse=True)
    bulk = tumour_bulk(tumour, cfg.bulk)
    tas = tumour_associated_stroma(bulk, stroma)
    save_mask(bulk, out / BULK_PNG)
    save_mask(tas, out / TAS_PNG)
    _update_index(out, slide, bulk=BULK_PNG, tas=TAS_PNG)
    return bulk, tas


def cmd_segment(args, cfg, stack):
    slide = load_slide(args.manifest)
    _segmentation(slide, cfg, stack, args.out, reuse=False)


def cmd_bulk(args, cfg, stack):
    slide = load_slide(args.manifest)
    _bulk(slide, cfg, stack, args.out, reuse=False)
    # keep the reused masks on record too
    _update_index(args.out, slide, tumour=TUMOUR_PNG, stroma=STROMA_PNG)


def cmd_detect(args, cfg, stack):
    slide = load_slide(args.manifest)
    _, det_ens = build_ensembles(slide, cfg, stack)
    src = slide.source_at(det_ens.resolution)
    roi = load_mask(args.roi) if args.roi else _tissue(slide)
    if roi is not None:
        roi = fit_to(resample(roi, src.resolution), src.width, src.height)
    prob = run_detection(src, det_ens, cfg, roi=roi)
    kept = nms(detect(prob, cfg.det.threshold, cfg.det.connectivity, cfg.det.min_area_px),
               cfg.det.nms_radius_um)
    save_detections(kept, args.out / DETECTIONS_JSON)
    _update_index(args.out, slide, detections=DETECTIONS_JSON)


def cmd_score(args, cfg, stack):
    slide = load_slide(args.manifest)
    seg_ens, det_ens = build_ensembles(slide, cfg, stack)
    res = run_pipeline(slide, seg_ens, det_ens, cfg, tissue=_tissue(slide))
    out = args.out
    save_mask(res.tumour, out / TUMOUR_PNG)
    save_mask(res.stroma, out / STROMA_PNG)
    save_mask(res.bulk, out / BULK_PNG)
    save_mask(res.tas, out / TAS_PNG)
    save_detections(res.detections, out / DETECTIONS_JSON)
    text = _result_json(res.result)
    write_text(out / RESULT_JSON, text + "\n")
    _update_index(out, slide, tumour=TUMOUR_PNG, stroma=STROMA_PNG, bulk=BULK_PNG, tas=TAS_PNG,
                  detections=DETECTIONS_JSON, tils_score=res.result.tils_score)
    print(text)


def cmd_render(args, cfg, stack):
    from .plotting import render_overlay

    slide = load_slide(args.manifest)
    out = args.out
    tumour, stroma = _segmentation(slide, cfg, stack, out, reuse=True)
    bulk, tas = _bulk(slide, cfg, stack, out, reuse=True)
    if (out / DETECTIONS_JSON).exists():
        dets = load_detections(out / DETECTIONS_JSON)
    else:
        dets = []
    coarsest = max(slide.manifest.levels, key=lambda lv: lv.mpp)
    thumb_res = Resolution(args.thumb_mpp) if args.thumb_mpp else Resolution(coarsest.mpp)
    src = slide.source_at(thumb_res)
    thumb = src.read(0, 0, src.width, src.height)

    def frame(m):
        return fit_to(resample(m, thumb_res), src.width, src.height)

    render_overlay(thumb, frame(tumour), frame(stroma), frame(bulk), frame(tas), dets,
                   out / OVERLAY_PNG)
    _update_index(out, slide, overlay=OVERLAY_PNG)


# -- evaluation -------------------------------------------------------------

def load_index(path) -> dict[str, dict]:
    """Slide entries from an index file, a stage output dir or a manifest.

    Paths inside entries are resolved to absolute paths.
    """
    path = Path(path)
    if path.is_dir():
        path = path / INDEX_JSON
    data = parse_json(path)
    root = path.parent
    if isinstance(data, dict) and "levels" in data:
        m = read_manifest(path)
        entry = {"area_mm2": m.area_mm2}
        for name in ("tumour", "stroma"):
            if name in m.masks:
                entry[name] = str(m.masks[name])
        if m.gt_detections is not None:
            entry["detections"] = str(m.gt_detections)
        return {m.slide_id: entry}
    if not isinstance(data, dict) or not isinstance(data.get("slides"), dict):
        raise ManifestError(f"{path}: expected an index with a 'slides' object or a slide manifest")
    out = {}
    for sid, entry in data["slides"].items():
        e = dict(entry)
        for key in ("tumour", "stroma", "detections", "bulk", "tas", "overlay"):
            if key in e:
                e[key] = str(root / e[key])
        out[sid] = e
    return out


def _merge_indexes(paths) -> dict[str, dict]:
    merged: dict[str, dict] = {}
    for p in paths:
        for sid, entry in load_index(p).items():
            if sid in merged:
                raise ManifestError(f"slide {sid!r} listed twice")
            merged[sid] = entry
    return merged


def _need(entry: dict, key: str, sid: str, side: str):
    if key not in entry:
        raise ManifestError(f"{side} entry for slide {sid!r} has no {key!r}")
    return entry[key]


def evaluate(task: str, preds: dict, gts: dict, cfg: PipelineConfig, areas: dict | None = None) -> dict:
    sids = sorted(set(preds) & set(gts))
    if not sids:
        raise ManifestError("no slide appears in both predictions and ground truth")
    missing = sorted(set(gts) - set(preds))
    if missing:
        log.warning("no predictions for %s", ", ".join(missing))
    per_slide: dict[str, dict] = {}
    aggregate: dict = {}
    if task == "dice":
        for sid in sids:
            dt = dice(load_mask(_need(preds[sid], "tumour", sid, "pred")), load_mask(_need(gts[sid], "tumour", sid, "gt")))
            ds = dice(load_mask(_need(preds[sid], "stroma", sid, "pred")), load_mask(_need(gts[sid], "stroma", sid, "gt")))
            per_slide[sid] = {"dice_tumour": dt, "dice_stroma": ds, "dice_mean": (dt + ds) / 2}
        for key in ("dice_tumour", "dice_stroma", "dice_mean"):
            aggregate[key] = float(np.mean([per_slide[s][key] for s in sids]))
    elif task in ("detection", "froc"):
        jobs = []
        tp = fp = fn = 0
        for sid in sids:
            p = load_detections(_need(preds[sid], "detections", sid, "pred"))
            g = load_detections(_need(gts[sid], "detections", sid, "gt"))
            area = (areas or {}).get(sid) or gts[sid].get("area_mm2") or preds[sid].get("area_mm2")
            m = match_detections(p, g, cfg.eval.hit_radius_um)
            f1, rec, prec = f1_precision_recall(m)
            per_slide[sid] = {"tp": m.tp, "fp": m.fp, "fn": m.fn, "f1": f1, "recall": rec, "precision": prec}
            tp, fp, fn = tp + m.tp, fp + m.fp, fn + m.fn
            jobs.append((p, g, area))
        f1, rec, prec = f1_precision_recall(MatchResult(tp, fp, fn))
        aggregate.update({"tp": tp, "fp": fp, "fn": fn, "f1": f1, "recall": rec, "precision": prec})
        if task == "froc":
            if any(a is None for *_, a in jobs):
                raise ManifestError("FROC needs an area for every slide (area_mm2 or --manifest)")
            curve = froc_multi(jobs, cfg.eval.hit_radius_um, cfg.eval.froc_targets)
            aggregate["froc"] = curve.to_dict()
    elif task == "pearson":
        xs, ys = [], []
        for sid in sids:
            pv = _need(preds[sid], "tils_score", sid, "pred")
            gv = _need(gts[sid], "tils_score", sid, "gt")
            per_slide[sid] = {"tils_score_pred": pv, "tils_score_gt": gv}
            xs.append(gv)
            ys.append(pv)
        aggregate["pearson_r"] = pearson(xs, ys)
        aggregate["n_slides"] = len(sids)
    else:
        raise ValueError(task)
    return {"task": task, "per_slide": per_slide, "aggregate": aggregate}


def _report_csv(report: dict) -> str:
    rows = report["per_slide"]
    cols = sorted({k for r in rows.values() for k in r})
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["slide_id", *cols])
    for sid in sorted(rows):
        w.writerow([sid, *(rows[sid].get(c, "") for c in cols)])
    return buf.getvalue()


def cmd_evaluate(args, cfg, stack):
    from .plotting import dice_figure, froc_figure, pearson_figure, save_figure

    gts = _merge_indexes(args.gt)
    preds = _merge_indexes(args.pred or [args.out])
    areas = {}
    for mp in args.manifest or []:
        m = read_manifest(mp)
        areas[m.slide_id] = m.area_mm2
    if areas:
        gts = {k: v for k, v in gts.items() if k in areas}
    report = evaluate(args.task, preds, gts, cfg, areas)
    out = args.out
    write_text(out / f"eval_{args.task}.json", dump_json(report))
    write_text(out / f"eval_{args.task}.csv", _report_csv(report))
    agg = report["aggregate"]
    if args.task == "dice":
        fig = dice_figure({s: (r["dice_tumour"], r["dice_stroma"]) for s, r in report["per_slide"].items()})
    elif args.task == "froc":
        f = agg["froc"]
        fig = froc_figure([(c["fp_per_mm2"], c["sensitivity"]) for c in f["curve"]],
                          f["targets_fp_per_mm2"], f["sensitivity_at_targets"], f["score"])
    elif args.task == "pearson":
        rows = report["per_slide"]
        fig = pearson_figure([r["tils_score_gt"] for r in rows.values()],
                             [r["tils_score_pred"] for r in rows.values()], agg["pearson_r"], list(rows))
    else:
        fig = None
    if fig is not None:
        save_figure(fig, out / f"eval_{args.task}.png")
    print(json.dumps(agg if args.task != "froc" else {**agg, "froc": agg["froc"]["score"]}))


# -- entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tiager", description="TILs scoring pipeline for whole-slide images.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, manifest_required=True):
        p.add_argument("--manifest", required=manifest_required, type=Path,
                       action="append" if not manifest_required else "store",
                       help="slide manifest (slide.json)")
        p.add_argument("--config", type=Path, help="pipeline config JSON (defaults if omitted)")
        p.add_argument("--out", required=True, type=Path, help="output directory")
        p.add_argument("--workers", type=int, help="override the config worker count")

    for name, help_ in (("segment", "tumour/stroma masks"), ("bulk", "tumour bulk and TAS masks"),
                        ("detect", "TIL detections"), ("score", "full pipeline and TILs score"),
                        ("render", "overlay figure")):
        p = sub.add_parser(name, help=help_)
        common(p)
        if name == "detect":
            p.add_argument("--roi", type=Path, help="mask PNG restricting detection")
        if name == "render":
            p.add_argument("--thumb-mpp", type=float, help="thumbnail resolution (default coarsest level)")

    p = sub.add_parser("evaluate", help="metrics against ground truth")
    common(p, manifest_required=False)
    p.add_argument("--task", required=True, choices=("dice", "detection", "froc", "pearson"))
    p.add_argument("--gt", required=True, type=Path, action="append",
                   help="ground truth: manifest, index JSON or stage output dir (repeatable)")
    p.add_argument("--pred", type=Path, action="append",
                   help="predictions: index JSON or stage output dir (default --out; repeatable)")

    p = sub.add_parser("synth", help="write a synthetic scoring slide")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--n-tils", type=int, default=995)
    p.add_argument("--layout", choices=("scoring", "background", "stroma-outside"), default="scoring")
    return parser


COMMANDS = {
    "segment": cmd_segment,
    "bulk": cmd_bulk,
    "detect": cmd_detect,
    "score": cmd_score,
    "render": cmd_render,
    "evaluate": cmd_evaluate,
}


def main(argv=None) -> int:
    setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"tiager: usage error: {exc}", file=sys.stderr)
        return 2
    try:
        if args.command == "synth":
            from .synthetic import make_scoring_slide

            s = make_scoring_slide(args.out, n_tils=args.n_tils,
                                   with_tumour=args.layout != "background",
                                   stroma_inside=args.layout != "stroma-outside")
            print(s.manifest)
            return 0
        cfg = load_config(args.config)
        if args.workers is not None:
            if args.workers < 1:
                raise UsageError("--workers must be >= 1")
            cfg = cfg.replace(workers=args.workers)
        args.out.mkdir(parents=True, exist_ok=True)
        with ExitStack() as stack:
            COMMANDS[args.command](args, cfg, stack)
    except UsageError as exc:
        print(f"tiager: usage error: {exc}", file=sys.stderr)
        return 2
    except (TiagerError, OSError, ValueError) as exc:
        log.debug("failure", exc_info=True)
        msg = " ".join(str(exc).split())
        print(f"tiager: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
